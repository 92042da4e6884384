"""Assembly of config -> game -> solved tables -> compiled model.

The bundle is the unit every front end (CLI, batch runner, service, tests)
works with. Solved tables are cached on disk keyed by the game-config hash;
a cache hit skips the solve entirely.
"""
from __future__ import annotations

from pathlib import Path

from .belief import Belief, CompiledModel
from .config import GameConfig, config_hash
from .game import JointState, MergeGame
from .qlk import LatentSpace, MissingTableError, QlkSolution, load_tables, save_tables, solve

DEFAULT_CACHE = Path(".cache/tables")


def table_path(cfg: GameConfig, cache_dir: str | Path | None = None) -> Path:
    cache = Path(cache_dir) if cache_dir else DEFAULT_CACHE
    return cache / f"qlk-{config_hash(cfg)}.npz"


class RuntimeBundle:
    def __init__(self, cfg: GameConfig, game: MergeGame, space: LatentSpace,
                 solution: QlkSolution):
        self.cfg = cfg
        self.game = game
        self.space = space
        self.solution = solution
        self.model = CompiledModel(game, solution, space)

    @classmethod
    def build(cls, cfg: GameConfig, cache_dir: str | Path | None = None,
              solve_if_missing: bool = True, workers: int = 1,
              progress=None) -> "RuntimeBundle":
        game = MergeGame(cfg)
        space = LatentSpace.from_config(cfg.latent)
        expected = config_hash(cfg)
        path = table_path(cfg, cache_dir)
        if path.exists():
            solution = load_tables(path, expected_hash=expected)
            if progress:
                progress(f"loaded cached tables {path}")
        elif solve_if_missing:
            solution = solve(game, workers=workers, progress=progress)
            save_tables(solution, path)
            if progress:
                progress(f"solved and cached tables at {path}")
        else:
            raise MissingTableError(
                f"no solved tables for this configuration at {path}; "
                "run the `solve` subcommand first"
            )
        return cls(cfg, game, space, solution)

    def prior_belief(self, state: JointState) -> Belief:
        return self.model.prior_belief(self.game.grid.to_index(state))

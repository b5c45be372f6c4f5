"""
Pension saver with stocks and bonds: prints the closed form alpha branches,
then solves the Riccati HJB equation for the DARA terminal utility and
reports the stock weight at a few wealth levels after one year.
"""
import numpy as np

from levypide.cli_runner import drift_from_config, hjb_grid_from_config, problem_from_config, utility_from_config
from levypide.hjb_riccati import RiccatiSolver, optimal_weights_surface, phi0_from_utility
from levypide.portfolio_alpha import breakpoints_n2, lipschitz_bounds
from levypide.utils.logger import get_logger
from levypide.utils.settings import bundled_config, load_config

WEALTH = (0.5, 1.0, 2.0, 5.0, 10.0)


def run(config, logger):
    problem = problem_from_config(config)
    bp = breakpoints_n2(problem)
    omega, L = lipschitz_bounds(problem)
    logger.info(f"bonds enter at phi={bp.phi_minus:.6g}; interior alpha = {bp.A:.6g} - {bp.B:.6g}/phi "
                f"+ {bp.C:.6g} phi; omega={omega:.6g}, L={L:.6g}")

    drift = drift_from_config(config)
    grid = hjb_grid_from_config(config)
    surface = RiccatiSolver(problem, drift, grid, logger=logger).solve(
        phi0_from_utility(utility_from_config(config), grid))
    weights = optimal_weights_surface(problem, surface, drift)
    for y in WEALTH:
        i = int(np.argmin(np.abs(surface.x - np.log(y))))
        logger.info(f"y={y:<5g} phi={surface.phi[-1, i]:.4f} stocks={weights.theta[-1, i, 0]:.4f}")


if __name__ == '__main__':
    logger = get_logger()
    try:
        run(load_config(bundled_config('hjb_pension.cfg')), logger)
    except Exception as x:
        logger.exception('Unexpected exception')

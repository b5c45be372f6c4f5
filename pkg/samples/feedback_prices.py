"""
Effect of a large trader on put prices under variance gamma jumps.

The trader follows the tanh strategy of vg.cfg; for each liquidity level
rho the sample solves the linear PIDE (shifted jumps only) and the
feedback PIDE (shifted jumps plus the enlarged diffusion
sigma^2 / (1 - rho psi_x)^2) and prints the at-the-money prices.
"""
from levypide.cli_runner import measure_from_section, scenario_from_config, strategy_from_config
from levypide.errors import AssumptionViolation
from levypide.pide_solver import PideGrid, price_from_surface, solve_feedback_pide, solve_linear_pide
from levypide.utils.logger import get_logger
from levypide.utils.settings import bundled_config, load_config

RHOS = (0.0, 0.05, 0.1, 0.2, 0.4)
GRID = PideGrid(L=4.0, N=256, M=100)


def rho_sweep(config, logger):
    scenario = scenario_from_config(config)
    spec = measure_from_section(config)
    strategy = strategy_from_config(config, scenario)
    strike = scenario.strike
    for rho in RHOS:
        try:
            linear = solve_linear_pide(scenario, spec, strategy, rho, grid=GRID)
            feedback = solve_feedback_pide(scenario, spec, strategy, rho, grid=GRID)
        except AssumptionViolation as e:
            logger.warning(f"rho={rho}: {e}")
            continue
        (_, v_linear), = price_from_surface(linear, [strike])
        (_, v_feedback), = price_from_surface(feedback, [strike])
        logger.info(f"rho={rho:<5g} linear={v_linear:.5f} feedback={v_feedback:.5f}")


if __name__ == '__main__':
    logger = get_logger()
    try:
        rho_sweep(load_config(bundled_config('vg.cfg')), logger)
    except Exception as x:
        logger.exception('Unexpected exception')

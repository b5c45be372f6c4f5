"""
Prices the European put of the bundled Merton scenario three ways: the
PIDE solver, the Poisson series and plain Black-Scholes with the same
diffusion volatility. Prints one row per spot; the PIDE and series columns
should agree to a few cents on the default grid.
"""
from levypide.analytic_pricers import bs_price, merton_series_price
from levypide.cli_runner import measure_from_section, scenario_from_config
from levypide.pide_solver import PideGrid, price_from_surface, solve_linear_pide
from levypide.utils.logger import get_logger
from levypide.utils.settings import bundled_config, load_config

GRID = PideGrid(L=4.0, N=400, M=200)  # use N=800 for 1e-3 agreement


def compare_prices(config, logger):
    scenario = scenario_from_config(config)
    merton = measure_from_section(config)
    spots = config.get_vector('output', 'spots')
    surface = solve_linear_pide(scenario, merton, grid=GRID, logger=logger, log_events=True)
    print(f"{'S':>10} {'PIDE':>10} {'series':>10} {'BS':>10}")
    for S, V in price_from_surface(surface, spots):
        series = merton_series_price(S, scenario, merton).price
        print(f"{S:10.4f} {V:10.5f} {series:10.5f} {bs_price(S, scenario):10.5f}")


if __name__ == '__main__':
    logger = get_logger()
    try:
        compare_prices(load_config(bundled_config('merton.cfg')), logger)
    except Exception as x:
        logger.exception('Unexpected exception')

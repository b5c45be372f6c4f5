"""
Batch front end.

    levypide price          [config] [--rho R] [--grid-N N] ...
    levypide table1         [config] [--workers W]
    levypide hedge          [config]
    levypide alpha          [config]
    levypide hjb            [config]
    levypide check-measure  [config]

Without a config file the bundled scenario of the command is used (see
levypide/configs). Data files are whitespace separated tables with 12
significant digits; provenance (version, config hash, wall time, UTC
timestamp) goes to a <command>.meta.json sidecar so data files stay
byte-identical between runs.

Exit codes: 0 success, 2 bad config or parameters, 3 numerical failure,
4 violated model assumption, 1 anything else.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np
from dateutil import tz

from levypide import __version__
from levypide.analytic_pricers import EuropeanOption, MarketScenario, bs_price
from levypide.errors import AssumptionViolation, ConfigError, NumericalError, ParameterDomainError
from levypide.feedback_shift import (bs_delta_strategy, constant_strategy, linear_strategy, normal_cdf_strategy,
                                     tanh_strategy)
from levypide.hedging import BlackScholesValue, HedgeContext, HedgeSolver, SurfaceValue
from levypide.hjb_riccati import (DriftSpec, HjbGrid, RiccatiSolver, UtilitySpec, export_surface,
                                  optimal_weights_surface, phi0_from_utility, value_function_shape)
from levypide.levy_measures import LevyMeasureSpec, admissibility_shape, check_admissible, martingale_drift
from levypide.pide_solver import PideConfig, PideGrid, PideSolver, price_from_surface
from levypide.portfolio_alpha import (AlphaCurve, Discrete, PortfolioProblem, breakpoints_n2, discrete_lines,
                                      lipschitz_bounds)
from levypide.utils.logger import get_logger
from levypide.utils.settings import bundled_config, dump_config, get_settings, load_config
from levypide.utils.tables import write_array, write_table

COMMANDS = ('price', 'table1', 'hedge', 'alpha', 'hjb', 'check-measure')
DEFAULT_CONFIGS = {
    'price': 'merton.cfg',
    'table1': 'table1.cfg',
    'hedge': 'merton.cfg',
    'alpha': 'pension.cfg',
    'hjb': 'hjb_pension.cfg',
    'check-measure': 'merton.cfg',
}
TABLE1_MODELS = ('vg', 'merton')
TRUE_WORDS = ('1', 'yes', 'true', 'on')


@dataclass
class RunConfig:
    command: str
    config_path: str
    out_dir: str
    overrides: dict = field(default_factory=dict)
    workers: int = 1

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}, expected one of {COMMANDS}")
        if not os.path.isfile(self.config_path):
            raise ConfigError(f"config file not found: {self.config_path}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")


def _flag(config, section, key, default):
    if not config.has(section, key):
        return default
    return config.get_str(section, key).lower() in TRUE_WORDS


def measure_from_section(config, section='measure'):
    if not config.has(section):
        raise ConfigError(f"{config.source}: missing section [{section}]")
    items = config.sections[section]
    if items.get('family', '').strip().lower() in ('none', 'bs'):
        return LevyMeasureSpec.null()
    try:
        return LevyMeasureSpec.from_dict(items)
    except ParameterDomainError as e:
        raise ConfigError(f"{config.source}: [{section}] {e}")


def scenario_from_config(config, r=None):
    option = EuropeanOption(strike=config.get_float('market', 'strike', 100.0),
                            maturity=config.get_float('market', 'maturity', 1.0),
                            kind=config.get_str('market', 'kind', 'put'))
    rate = config.get_float('market', 'r', 0.0) if r is None else r
    return MarketScenario(sigma=config.get_float('market', 'sigma'), r=rate, option=option,
                          rho_liquidity=config.get_float('market', 'rho', 0.0))


def grid_from_config(config):
    return PideGrid(L=config.get_float('grid', 'L', 4.0), N=config.get_int('grid', 'N', 400),
                    M=config.get_int('grid', 'M', 200))


def pide_config_from_config(config):
    return PideConfig(delta_sign=config.get_str('solver', 'delta_sign', 'minus'),
                      xi_mode=config.get_str('solver', 'xi_mode', 'first_order'),
                      truncation=config.get_float('solver', 'truncation', 8.0),
                      shift=_flag(config, 'solver', 'shift', True))


def strategy_from_config(config, scenario):
    kind = config.get_str('strategy', 'kind', 'none').lower()
    K, T = scenario.strike, scenario.maturity
    if kind == 'none':
        return None
    if kind == 'constant':
        return constant_strategy(config.get_float('strategy', 'value', 0.0), K, T)
    if kind == 'linear':
        return linear_strategy(config.get_float('strategy', 'slope'), K, T)
    if kind == 'tanh':
        return tanh_strategy(config.get_float('strategy', 'amplitude'), config.get_float('strategy', 'width', 1.0),
                             K, T)
    if kind == 'normal_cdf':
        return normal_cdf_strategy(config.get_float('strategy', 'amplitude'),
                                   config.get_float('strategy', 'width', 1.0), K, T)
    if kind == 'bs_delta':
        return bs_delta_strategy(scenario, config.get_float('strategy', 'scale', 1.0),
                                 config.get_float('strategy', 'tau_floor', 0.25))
    raise ConfigError(f"{config.source}: unknown strategy kind {kind!r}")


def problem_from_config(config, discrete=False):
    mu = config.get_vector('problem', 'mu')
    Sigma = config.get_matrix('problem', 'sigma')
    decision_set = Discrete.of(config.get_matrix('discrete', 'points')) if discrete else None
    try:
        return PortfolioProblem(mu, Sigma, decision_set)
    except ParameterDomainError as e:
        raise ConfigError(f"{config.source}: {e}")


def utility_from_config(config):
    kind = config.get_str('utility', 'kind', 'dara').lower()
    if kind == 'dara':
        return UtilitySpec.dara(config.get_float('utility', 'a0'), config.get_float('utility', 'a1'),
                                config.get_float('utility', 'x_star'), config.get_float('utility', 'gamma', 6.0))
    if kind == 'arctan':
        return UtilitySpec.arctan()
    if kind == 'sampled':
        return UtilitySpec.sampled(config.get_vector('utility', 'x'), config.get_vector('utility', 'phi0'))
    raise ConfigError(f"{config.source}: unknown utility kind {kind!r}")


def hjb_grid_from_config(config):
    return HjbGrid(X=config.get_float('hjb', 'X', 5.0), Nx=config.get_int('hjb', 'Nx', 200),
                   T=config.get_float('hjb', 'T', 1.0), Nt=config.get_int('hjb', 'Nt', 200))


def drift_from_config(config):
    return DriftSpec(C=config.get_float('drift', 'C', 0.0), y_minus=config.get_float('drift', 'y_minus', 1.0),
                     ito_correction=_flag(config, 'drift', 'ito_correction', True))


def apply_overrides(config, overrides):
    """
    Write command line overrides into the config so they are hashed and
    validated with it. --rho sets the market rho and, when the file has a
    [hedge] section, the hedge rho too.
    """
    targets = {
        'grid_N': [('grid', 'N')], 'grid_M': [('grid', 'M')], 'grid_L': [('grid', 'L')],
        'rho': [('market', 'rho'), ('hedge', 'rho')], 'delta_sign': [('solver', 'delta_sign')],
        'xi_mode': [('solver', 'xi_mode')],
    }
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in targets:
            raise ConfigError(f"unknown override {key!r}")
        for section, option in targets[key]:
            if section == 'hedge' and not config.has('hedge'):
                continue
            config.set(section, option, value)
    return config


def _table1_job(job):
    model, r, measure, market, grid, pide_config, spots = job
    scenario = market.with_rate(r)
    surface = PideSolver(scenario, measure, grid=grid, config=pide_config, log_events=False).solve()
    return model, r, [price for _, price in price_from_surface(surface, spots)]


def run_price(config, out_dir, logger, workers=1):
    scenario = scenario_from_config(config)
    spec = measure_from_section(config)
    strategy = strategy_from_config(config, scenario)
    feedback = _flag(config, 'solver', 'feedback', False)
    solver = PideSolver(scenario, spec, strategy, scenario.rho_liquidity, grid_from_config(config),
                        pide_config_from_config(config), feedback=feedback, logger=logger)
    surface = solver.solve()
    spots = config.get_vector('output', 'spots')
    rows = [(S, V, bs_price(S, scenario)) for S, V in price_from_surface(surface, spots)]
    return [write_array(os.path.join(out_dir, 'prices.txt'), ('S', 'V', 'V_bs'), rows)]


def run_table1(config, out_dir, logger, workers=1):
    market = scenario_from_config(config)
    grid, pide_config = grid_from_config(config), pide_config_from_config(config)
    rates = config.get_vector('table1', 'rates')
    spots = config.get_vector('table1', 'spots')
    jobs = [(model, r, measure_from_section(config, f'measure.{model}'), market, grid, pide_config, spots)
            for model in TABLE1_MODELS for r in rates]
    logger.info(f"table1: {len(jobs)} PIDE solves on {workers} worker(s)")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_table1_job, jobs))
    else:
        results = [_table1_job(job) for job in jobs]
    solved = {(model, r): prices for model, r, prices in results}

    columns, header = [], ['S']
    for r in rates:
        columns.append([bs_price(S, market.with_rate(r)) for S in spots])
        header.append(f'BS_r{r:g}')
    for model in TABLE1_MODELS:
        for r in rates:
            columns.append(solved[(model, r)])
            header.append(f'{model}_r{r:g}')
    rows = [[S] + [column[i] for column in columns] for i, S in enumerate(spots)]
    outputs = [write_array(os.path.join(out_dir, 'table1.txt'), header, rows)]

    if config.has('printed', 'values'):
        printed = np.asarray(config.get_matrix('printed', 'values'))
        if printed.shape != (len(spots), len(header)):
            raise ConfigError(f"{config.source}: [printed] values must be {len(spots)} x {len(header)}")
        deviations = []
        for i, S in enumerate(spots):
            for k in range(1, len(header)):
                computed, reference = rows[i][k], printed[i, k]
                deviations.append((S, header[k], computed, reference, computed - reference,
                                   (computed - reference) / reference))
        outputs.append(write_table(os.path.join(out_dir, 'table1_deviation.txt'),
                                   ('S', 'column', 'computed', 'printed', 'deviation', 'relative'), deviations))
        worst = max(deviations, key=lambda row: abs(row[5]))
        logger.info(f"table1: largest relative deviation from the printed table {worst[5]:.3g} "
                    f"({worst[1]} at S={worst[0]:g})")
    return outputs


def run_hedge(config, out_dir, logger, workers=1):
    scenario = scenario_from_config(config)
    spec = measure_from_section(config)
    if config.get_str('hedge', 'provider', 'bs').lower() == 'surface':
        surface = PideSolver(scenario, spec, grid=grid_from_config(config), config=pide_config_from_config(config),
                             logger=logger).solve()
        provider = SurfaceValue(surface)
    else:
        provider = BlackScholesValue(scenario)
    ctx = HedgeContext(provider, scenario, spec, rho=config.get_float('hedge', 'rho', scenario.rho_liquidity),
                       truncation=config.get_float('hedge', 'truncation', 4.0))
    solver = HedgeSolver(ctx, logger=logger)
    path = os.path.join(out_dir, 'hedge.txt')
    return [solver.export(path, config.get_vector('hedge', 'times'), config.get_vector('hedge', 'spots'))]


def run_alpha(config, out_dir, logger, workers=1):
    problem = problem_from_config(config)
    phis = np.linspace(config.get_float('alpha', 'phi_min', 0.05), config.get_float('alpha', 'phi_max', 20.0),
                       config.get_int('alpha', 'count', 400))
    omega, L = lipschitz_bounds(problem)
    logger.info(f"alpha: n={problem.n}, omega={omega:.6g}, L={L:.6g}")
    outputs = [AlphaCurve(problem, phis).export(os.path.join(out_dir, 'alpha_curve.txt'))]
    if problem.n == 2:
        b = breakpoints_n2(problem)
        outputs.append(write_array(os.path.join(out_dir, 'alpha_breakpoints.txt'),
                                   ('phi_minus', 'phi_plus', 'A', 'B', 'C', 'D_minus', 'E_minus', 'D_plus', 'E_plus'),
                                   [(b.phi_minus, b.phi_plus, b.A, b.B, b.C, b.D_minus, b.E_minus, b.D_plus,
                                     b.E_plus)]))
    if config.has('discrete', 'points'):
        lines = problem_from_config(config, discrete=True)
        E, D = discrete_lines(lines)
        outputs.append(AlphaCurve(lines, phis).export(os.path.join(out_dir, 'alpha_discrete.txt')))
        outputs.append(write_array(os.path.join(out_dir, 'alpha_lines.txt'), ('E', 'D'), zip(E, D)))
    return outputs


def run_hjb(config, out_dir, logger, workers=1):
    problem = problem_from_config(config)
    drift = drift_from_config(config)
    grid = hjb_grid_from_config(config)
    phi0 = phi0_from_utility(utility_from_config(config), grid)
    surface = RiccatiSolver(problem, drift, grid, logger=logger).solve(phi0)
    weights = optimal_weights_surface(problem, surface, drift)
    every = config.get_int('hjb', 'output_every', max(1, grid.Nt // 10))
    outputs = [export_surface(os.path.join(out_dir, 'hjb_surface.txt'), surface, weights, every=every)]

    def summary():
        for j in range(0, surface.taus.size, every):
            lower, upper = surface.bounds.envelope(surface.taus[j])
            yield (surface.taus[j], surface.phi[j].min(), surface.phi[j].max(), surface.alpha[j].min(),
                   surface.alpha[j].max(), lower, upper, surface.ledger.mass[j], surface.ledger.expected[j])

    outputs.append(write_array(os.path.join(out_dir, 'hjb_summary.txt'),
                               ('tau', 'phi_min', 'phi_max', 'alpha_min', 'alpha_max', 'envelope_lower',
                                'envelope_upper', 'mass', 'mass_expected'), summary()))
    shape = value_function_shape(surface.x, surface.phi[-1])
    outputs.append(write_array(os.path.join(out_dir, 'hjb_value_shape.txt'), ('x', 'V_unnormalized'),
                               zip(surface.x, shape)))
    outputs.append(write_array(os.path.join(out_dir, 'hjb_contours.txt'), ('tau', 'x'), weights.contours))
    return outputs


def run_check_measure(config, out_dir, logger, workers=1):
    spec = measure_from_section(config)
    if spec.is_null:
        raise ConfigError(f"{config.source}: check-measure needs a measure with jumps")
    truncation = config.get_float('solver', 'truncation', 8.0)
    shape = admissibility_shape(spec, truncation)
    samples = np.concatenate([-np.geomspace(1e-4, truncation, 400), np.geomspace(1e-4, truncation, 400)])
    report = check_admissible(spec, shape, samples)
    sigma = config.get_float('market', 'sigma', 0.0)
    gamma = martingale_drift(spec, sigma, truncation=truncation)
    logger.info(f"check-measure: {spec.family} admissible={report.admissible} "
                f"shape=({shape.alpha:g}, {shape.D:g}, {shape.mu_shape:g}) C0={shape.C0:.6g}")
    rows = [('family', spec.family), ('admissible', report.admissible), ('alpha', shape.alpha), ('D', shape.D),
            ('mu_shape', shape.mu_shape), ('C0', shape.C0), ('C0_samples', report.C0), ('decays', report.decays),
            ('worst_point', report.worst_point), ('gamma', gamma)]
    return [write_table(os.path.join(out_dir, 'measure_check.txt'), ('key', 'value'), rows)]


RUNNERS = {
    'price': run_price,
    'table1': run_table1,
    'hedge': run_hedge,
    'alpha': run_alpha,
    'hjb': run_hjb,
    'check-measure': run_check_measure,
}


def write_meta(out_dir, command, config_text, wall_time, outputs):
    meta = {
        'command': command,
        'version': __version__,
        'config_sha256': hashlib.sha256(config_text.encode('utf-8')).hexdigest(),
        'wall_time_s': round(wall_time, 6),
        'timestamp_utc': datetime.now(tz=tz.tzutc()).isoformat(),
        'outputs': [os.path.basename(str(path)) for path in outputs],
    }
    path = os.path.join(out_dir, f"{command.replace('-', '_')}.meta.json")
    with open(path, 'w', newline='\n') as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write('\n')
    return path


def run(run_config, logger=None):
    """
    Executes one command and writes its tables plus the metadata sidecar.

    :return: list of written paths
    """
    logger = logger or get_logger('cli')
    config = apply_overrides(load_config(run_config.config_path), run_config.overrides)
    config_text = dump_config(config)
    os.makedirs(run_config.out_dir, exist_ok=True)
    logger.info(f"{run_config.command}: config {run_config.config_path}, output {run_config.out_dir}")
    started = time.perf_counter()
    outputs = RUNNERS[run_config.command](config, run_config.out_dir, logger, workers=run_config.workers)
    wall_time = time.perf_counter() - started
    outputs.append(write_meta(run_config.out_dir, run_config.command, config_text, wall_time, outputs))
    logger.info(f"{run_config.command}: wrote {len(outputs)} files in {wall_time:.2f}s")
    return outputs


def build_parser():
    parser = argparse.ArgumentParser(prog='levypide', description='Levy PIDE option pricing and Riccati HJB portfolio runs')
    parser.add_argument('command', choices=COMMANDS, help='what to run')
    parser.add_argument('config', nargs='?', help='scenario file, the bundled one for the command if omitted')
    parser.add_argument('--grid-N', dest='grid_N', type=int, help='spatial cells of the PIDE grid')
    parser.add_argument('--grid-M', dest='grid_M', type=int, help='time steps of the PIDE grid')
    parser.add_argument('--grid-L', dest='grid_L', type=float, help='half-width of the log-price domain')
    parser.add_argument('--rho', type=float, help='liquidity parameter of the large trader')
    parser.add_argument('--delta-sign', dest='delta_sign', choices=('plus', 'minus'),
                        help='sign of the drift correction delta in the convection term')
    parser.add_argument('--xi-mode', dest='xi_mode', choices=('exact', 'first-order', 'no-ezfactor'),
                        help='shift function approximation')
    parser.add_argument('--out', help='output directory')
    parser.add_argument('--workers', type=int, help='worker processes for table1')
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logger = get_logger('cli')
    try:
        settings = get_settings()
        overrides = {key: getattr(args, key) for key in ('grid_N', 'grid_M', 'grid_L', 'rho', 'delta_sign', 'xi_mode')}
        run_config = RunConfig(command=args.command,
                               config_path=args.config or bundled_config(DEFAULT_CONFIGS[args.command]),
                               out_dir=args.out or settings['out_dir'], overrides=overrides,
                               workers=args.workers or settings['workers'])
        run(run_config, logger)
    except (ConfigError, ParameterDomainError) as e:
        logger.error(f"configuration error: {e}")
        return 2
    except NumericalError as e:
        logger.error(f"numerical failure: {type(e).__name__}: {e}")
        return 3
    except AssumptionViolation as e:
        logger.error(f"model assumption violated: {e}")
        return 4
    except Exception:
        logger.exception('Unexpected exception')
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())

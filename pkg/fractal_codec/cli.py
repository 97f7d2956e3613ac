from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Callable, Optional, Sequence, TypeVar

import click
import logzero
from logzero import logger
from tabulate import tabulate

from .codeformat import (HEADER, CodeFormatError, QuantSpec, compression_ratio, payload_bits, read_code,
                         write_code)
from .decoder import DecodeError, decode
from .encoder import EncodeError, encode
from .entropy_pool import PoolError
from .metrics_bench import Benchmark, bench_levels, proposition_check, run_benchmark, s_histogram, write_histograms
from .model import ConfigError, DecodeSettings, EncoderConfig, MinEntropy, PoolSelection, SMode, TopK
from .pixmap import PgmFormatError, read_pgm, write_pgm

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_CODEC = 3

S_MODE_NAMES = ['predefined', 'sampled10', 'ls', 'least_squares']

F = TypeVar('F', bound=Callable[..., Any])


def _comma_list(ctx: click.Context, param: click.Parameter, value: Optional[str]) -> list[str]:
    if value is None:
        return []
    items = [item.strip() for item in value.split(',') if item.strip()]
    if not items:
        raise click.BadParameter("expected a comma-separated list")
    return items


def encoder_options(func: F) -> F:
    options = [
        click.option('--pool-size', type=click.IntRange(min=1), default=None,
                     help="Keep the K highest-entropy domain origins (default 256)."),
        click.option('--min-entropy', type=click.FloatRange(min=0), default=None,
                     help="Keep domain origins with entropy >= this threshold (nats)."),
        click.option('--s-mode', type=click.Choice(S_MODE_NAMES), default='predefined', show_default=True),
        click.option('--rms-tol', type=float, default=8.0, show_default=True,
                     help="Per-pixel RMS error accepted before a range is split."),
        click.option('--step-factor', type=float, default=1.0, show_default=True,
                     help="Domain stride as a multiple of the range size."),
        click.option('--max-range', type=int, default=16, show_default=True),
        click.option('--min-range', type=int, default=2, show_default=True),
        click.option('--s-max', type=float, default=1.0, show_default=True),
        click.option('--decode-iters', type=int, default=12, show_default=True),
        click.option('--threads', type=click.IntRange(min=1), default=None,
                     help="Worker threads for range matching (default: all cores)."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _config_from(options: dict[str, Any]) -> EncoderConfig:
    if options['pool_size'] is not None and options['min_entropy'] is not None:
        raise click.UsageError("--pool-size and --min-entropy are mutually exclusive")
    selection: PoolSelection = TopK(256)
    if options['pool_size'] is not None:
        selection = TopK(options['pool_size'])
    elif options['min_entropy'] is not None:
        selection = MinEntropy(options['min_entropy'])
    return EncoderConfig(max_range=options['max_range'],
                         min_range=options['min_range'],
                         rms_tolerance=options['rms_tol'],
                         pool_selection=selection,
                         domain_step_factor=options['step_factor'],
                         s_mode=SMode.parse(options['s_mode']),
                         s_max=options['s_max'],
                         decode_iterations=options['decode_iters'],
                         workers=options['threads'])


@click.group()
@click.option('-v', '--verbose', count=True, help="-v for progress, -vv for debugging output.")
def cli(verbose: int) -> None:
    """Fractal image codec with entropy-pruned domain pools."""
    logzero.loglevel({0: logging.WARNING, 1: logging.INFO}.get(verbose, logging.DEBUG))


@cli.command('encode')
@click.option('-i', '--input', 'input_path', required=True, help="Input PGM (P5, maxval 255).")
@click.option('-o', '--output', 'output_path', required=True, help="Output .fic code.")
@encoder_options
def encode_command(input_path: str, output_path: str, **options: Any) -> None:
    config = _config_from(options)
    image = read_pgm(input_path)
    code, stats = encode(image, config)
    stream = write_code(output_path, code)
    leaves = ' '.join(f"leaves_{level}={count}" for level, count in stats.leaves_per_level.items())
    click.echo(f"cr={compression_ratio(image, stream):.2f} seconds={stats.seconds:.3f} {leaves}")


@cli.command('decode')
@click.option('-i', '--input', 'input_path', required=True, help="Input .fic code.")
@click.option('-o', '--output', 'output_path', required=True, help="Output PGM.")
@click.option('--iters', type=int, default=12, show_default=True)
@click.option('--init-gray', type=int, default=128, show_default=True)
@click.option('--epsilon', type=float, default=0.5, show_default=True,
              help="Stop once no pixel changes by this much.")
def decode_command(input_path: str, output_path: str, iters: int, init_gray: int, epsilon: float) -> None:
    settings = DecodeSettings(iterations=iters, initial_gray=init_gray, convergence_epsilon=epsilon)
    result = decode(read_code(input_path), settings)
    write_pgm(output_path, result.image)
    click.echo(f"iterations={result.iterations_used} final_delta={result.final_delta:.3f}")


@cli.command('bench')
@click.argument('images', nargs=-1)
@click.option('-i', '--input', 'inputs', multiple=True, help="Input PGM; repeat or list after the flags.")
@click.option('--pool-sizes', default='256,64,32', show_default=True, callback=_comma_list)
@click.option('--modes', default='predefined,sampled10', show_default=True, callback=_comma_list)
@click.option('-o', '--output', 'output_path', required=True, help="Output CSV.")
@encoder_options
def bench_command(images: tuple[str, ...], inputs: tuple[str, ...], pool_sizes: list[str], modes: list[str],
                  output_path: str, **options: Any) -> None:
    paths = list(inputs) + list(images)
    if not paths:
        raise click.UsageError("bench needs at least one input image")
    try:
        sizes = [int(size) for size in pool_sizes]
    except ValueError:
        raise click.BadParameter(f"pool sizes must be integers: {pool_sizes}") from None
    config = _config_from(options)
    loaded = [(Path(path).stem, read_pgm(path)) for path in paths]
    rows = run_benchmark(loaded, sizes, [SMode.parse(mode) for mode in modes], config, output_path)
    levels = bench_levels(config)
    click.echo(tabulate([Benchmark.csv_row(row, levels) for row in rows],
                        headers=['image', 'K', 'mode', 'cr', 'seconds', 'psnr'] + [f"{level}" for level in levels]))


@cli.command('shist')
@click.option('-i', '--input', 'input_path', required=True, help="Input PGM.")
@click.option('-o', '--output', 'prefix', required=True, help="Prefix for <prefix>_<level>.csv.")
@encoder_options
def shist_command(input_path: str, prefix: str, **options: Any) -> None:
    config = _config_from(options)
    histograms = s_histogram(read_pgm(input_path), config)
    for path in write_histograms(prefix, histograms):
        logger.info(f"wrote {path}")
    click.echo(tabulate([[level, sum(h.counts), h.median] for level, h in sorted(histograms.items(), reverse=True)],
                        headers=['level', 'ranges', 'median s']))


@cli.command('info')
@click.option('-i', '--input', 'input_path', required=True, help="Input .fic code.")
def info_command(input_path: str) -> None:
    code = read_code(input_path)
    size = Path(input_path).stat().st_size
    spec = QuantSpec.for_code(code)
    click.echo(tabulate([['size', f"{code.width}x{code.height}"],
                         ['ranges', f"{code.max_range}..{code.min_range}"],
                         ['s-mode', code.s_mode.value],
                         ['s_max', code.s_max],
                         ['step', code.step],
                         ['bytes', size],
                         ['header bytes', HEADER.size + len(code.levels())],
                         ['payload bits', payload_bits(code)],
                         ['bits per pixel', f"{8 * size / (code.width * code.height):.4f}"]],
                        tablefmt='plain'))
    leaves = code.leaves_per_level()
    candidates = code.schedule
    click.echo(tabulate([[level, leaves[level], spec.leaf_bits(level), ', '.join(f"{s:g}" for s in candidates.level(level))]
                         for level in code.levels()],
                        headers=['level', 'leaves', 'bits/leaf', 's candidates']))


@cli.command('prop')
@click.option('--trials', type=click.IntRange(min=1), default=10000, show_default=True)
@click.option('--n', 'n', type=click.IntRange(min=1), default=256, show_default=True)
@click.option('--seed', type=int, default=0, show_default=True)
def prop_command(trials: int, n: int, seed: int) -> None:
    report = proposition_check(trials, n, seed)
    click.echo(f"trials={report.trials} n={report.n} seed={report.seed} holds={report.holds} "
               f"frequency={report.frequency:.4f}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        result = cli.main(args=list(argv) if argv is not None else None, prog_name='fractal_codec',
                          standalone_mode=False)
    except click.exceptions.Abort:
        return EXIT_USAGE
    except click.ClickException as e:
        e.show()
        return EXIT_USAGE
    except ConfigError as e:
        logger.error(f"configuration: {e}")
        return EXIT_USAGE
    except (OSError, PgmFormatError, CodeFormatError) as e:
        logger.error(f"input/output: {e}")
        return EXIT_IO
    except (EncodeError, DecodeError, PoolError, ValueError) as e:
        logger.error(f"codec: {e}")
        return EXIT_CODEC
    return result if isinstance(result, int) else EXIT_OK

from .model import (ConfigError, DecodeSettings, EncoderConfig, EncodeStats, FractalCode, MinEntropy, SMode,
                    SSchedule, TopK, TransformRecord)
from .pixmap import (BlockError, GrayImage, PgmFormatError, apply_isometry, block_mean, decimate, extract_block,
                     load_pgm, read_pgm, save_pgm, write_pgm)
from .entropy_pool import (DomainEntry, DomainPool, GrayHistogram, PoolError, block_entropy, build_domain_pool,
                           log_permutation_count)
from .encoder import EncodeError, Encoder, encode, fixed_s_match, match_range, optimal_so
from .decoder import DecodeError, DecodeResult, decode, iterate_once
from .codeformat import (CodeFormatError, QuantizationError, QuantSpec, compression_ratio, dequantize_o, deserialize,
                         expected_size, quantize_o, read_code, serialize, write_code)
from .metrics_bench import (Benchmark, BenchRow, LevelHistogram, PropositionReport, proposition_check, psnr,
                            roundtrip, run_benchmark, s_histogram)

//! Image quality, analytic FLOP counts, allocator-measured memory and latency.

pub mod bench;
pub mod flops;
pub mod memory;
pub mod quality;

pub use bench::{bench_latency, BenchReport, BenchRow, LatencyStats, MAC_NOTE};
pub use flops::{count_flops, flop_breakdown, predictor_flops, CostModel, LayerFlops};
pub use memory::{measure_peak_aux, CountingAlloc};
pub use quality::{mse, psnr, psnr_from_mse, ssim, PSNR_SENTINEL};

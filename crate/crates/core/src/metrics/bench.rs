use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{Error, Result};

/// Stated in every report header.
pub const MAC_NOTE: &str = "FLOPs count one multiply-accumulate as 2 FLOPs";

pub const CSV_HEADER: &str = "name,h,w,c,k,flops,peak_aux_elems,median_ms,p90_ms,psnr,ssim";

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyStats {
    pub reps: usize,
    pub warmup: usize,
    pub threads: usize,
    pub median_ms: f64,
    pub p90_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Times `reps` calls of `f` after `warmup` untimed calls.
pub fn bench_latency<R>(reps: usize, warmup: usize, mut f: impl FnMut() -> R) -> Result<LatencyStats> {
    if reps < 3 {
        return Err(Error::OutOfRange(format!("bench_latency needs at least 3 repetitions, got {reps}")));
    }
    for _ in 0..warmup {
        std::hint::black_box(f());
    }
    let mut times: Vec<f64> = (0..reps)
        .map(|_| {
            let t = Instant::now();
            std::hint::black_box(f());
            t.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let median = if reps % 2 == 1 { times[reps / 2] } else { 0.5 * (times[reps / 2 - 1] + times[reps / 2]) };
    Ok(LatencyStats {
        reps,
        warmup,
        threads: crate::parallel::threads(),
        median_ms: median,
        p90_ms: nearest_rank(&times, 0.9).max(median),
        min_ms: times[0],
        max_ms: times[reps - 1],
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub name: String,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub k: usize,
    pub flops: u64,
    pub peak_aux_elems: Option<u64>,
    pub latency: Option<LatencyStats>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
}

impl BenchRow {
    pub fn new(name: impl Into<String>, h: usize, w: usize, c: usize, k: usize, flops: u64) -> Self {
        BenchRow { name: name.into(), h, w, c, k, flops, peak_aux_elems: None, latency: None, psnr: None, ssim: None }
    }
}

fn opt<T>(v: Option<T>, f: impl FnOnce(T) -> String) -> String {
    v.map(f).unwrap_or_default()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn push(&mut self, row: BenchRow) {
        self.rows.push(row);
    }

    /// CSV with the fixed header; empty fields where a column does not apply.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.name,
                r.h,
                r.w,
                r.c,
                r.k,
                r.flops,
                opt(r.peak_aux_elems, |v| v.to_string()),
                opt(r.latency.as_ref(), |l| format!("{:.4}", l.median_ms)),
                opt(r.latency.as_ref(), |l| format!("{:.4}", l.p90_ms)),
                opt(r.psnr, |v| format!("{v:.4}")),
                opt(r.ssim, |v| format!("{v:.6}")),
            );
        }
        s
    }

    /// Aligned table for terminals, headed by [`MAC_NOTE`].
    pub fn to_table(&self) -> String {
        let head = ["name", "h", "w", "c", "k", "GFLOPs", "peak aux", "median ms", "p90 ms", "psnr", "ssim"];
        let cells: Vec<[String; 11]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.name.clone(),
                    r.h.to_string(),
                    r.w.to_string(),
                    r.c.to_string(),
                    r.k.to_string(),
                    format!("{:.4}", r.flops as f64 / 1e9),
                    opt(r.peak_aux_elems, |v| v.to_string()),
                    opt(r.latency.as_ref(), |l| format!("{:.3}", l.median_ms)),
                    opt(r.latency.as_ref(), |l| format!("{:.3}", l.p90_ms)),
                    opt(r.psnr, |v| format!("{v:.2}")),
                    opt(r.ssim, |v| format!("{v:.4}")),
                ]
            })
            .collect();
        let width: Vec<usize> =
            (0..head.len()).map(|i| cells.iter().map(|c| c[i].len()).chain([head[i].len()]).max().unwrap_or(0)).collect();
        let line = |cols: Vec<&str>| -> String {
            cols.iter().enumerate().map(|(i, c)| format!("{c:>w$}", w = width[i])).collect::<Vec<_>>().join("  ")
        };
        let mut s = format!("# {MAC_NOTE}\n{}\n", line(head.to_vec()));
        for c in &cells {
            s.push_str(&line(c.iter().map(String::as_str).collect()));
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noop_stats() {
        let s = bench_latency(5, 2, || ()).unwrap();
        assert_eq!(s.reps, 5);
        assert!(s.median_ms >= 0.0 && s.median_ms <= s.p90_ms && s.min_ms <= s.median_ms);
        assert!(bench_latency(2, 0, || ()).is_err());
    }

    #[test]
    fn csv_layout() {
        let mut r = BenchReport::default();
        let mut row = BenchRow::new("fused", 8, 8, 3, 1, 100);
        row.peak_aux_elems = Some(12);
        r.push(row);
        assert_eq!(r.to_csv(), format!("{CSV_HEADER}\nfused,8,8,3,1,100,12,,,,\n"));
        assert!(r.to_table().starts_with("# FLOPs count"));
    }
}

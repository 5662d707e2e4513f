use std::fmt;

use crate::error::Result;
use crate::malleconv::{
    kernel_swap_apply, predictor_tape, slice_apply_fused, slice_apply_naive, KernelGrid, PredictorConfig,
};
use crate::ops::{depthwise_conv2d, ConvSpec, Padding};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::{max_abs_diff, Shape, Tensor};
use crate::verify::gradcheck::{check_gradients, GradCheck, Graph, FD_TOL};

pub const ORACLE_TOL: f32 = 1e-5;
pub const CONSTANT_GRID_TOL: f32 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub detail: String,
    pub error: f32,
    pub tol: f32,
    pub passed: bool,
}

impl fmt::Display for CaseResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {:<28} err={:.3e} tol={:.0e} {}", self.name, self.error, self.tol, self.detail)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SuiteReport {
    pub cases: Vec<CaseResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> usize {
        self.cases.iter().filter(|c| !c.passed).count()
    }

    pub fn max_error(&self) -> f32 {
        self.cases.iter().map(|c| c.error).fold(0.0, f32::max)
    }

    pub fn extend(&mut self, other: SuiteReport) {
        self.cases.extend(other.cases);
    }
}

fn case(name: String, detail: String, error: f32, tol: f32) -> CaseResult {
    CaseResult { name, detail, error, tol, passed: error < tol }
}

fn pick<T: Copy>(rng: &mut Rng, items: &[T]) -> T {
    items[rng.below(items.len())]
}

fn range(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

fn random_grid(n: usize, gh: usize, gw: usize, c: usize, k: usize, rng: &mut Rng) -> Result<KernelGrid> {
    KernelGrid::new(Tensor::randn(Shape::new(n, gh, gw, (k * k + 1) * c), 0.5, rng), k)
}

/// Fused against naive slicing on `cases` random configurations, followed
/// by linearity, constant-grid and kernel-swap invariants.
pub fn oracle_suite(cases: usize, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::default();
    for i in 0..cases {
        let mut rng = Rng::keyed(seed, &format!("oracle/{i}"));
        let (n, h, w) = (range(&mut rng, 1, 2), range(&mut rng, 1, 33), range(&mut rng, 1, 33));
        let (c, k) = (pick(&mut rng, &[1, 3, 8]), pick(&mut rng, &[1, 3, 5]));
        let (gh, gw) = (range(&mut rng, 1, h), range(&mut rng, 1, w));
        let x = Tensor::randn(Shape::new(n, h, w, c), 1.0, &mut rng);
        let g = random_grid(n, gh, gw, c, k, &mut rng)?;
        let err = max_abs_diff(&slice_apply_fused(&x, &g)?, &slice_apply_naive(&x, &g)?.output)?;
        let detail = format!("n={n} h={h} w={w} c={c} k={k} grid={gh}x{gw}");
        report.cases.push(case(format!("fused_vs_naive#{i:03}"), detail, err, ORACLE_TOL));
    }
    let extra = (cases / 20).max(3);
    for i in 0..extra {
        let mut rng = Rng::keyed(seed, &format!("invariant/{i}"));
        let (h, w, c, k) = (range(&mut rng, 4, 24), range(&mut rng, 4, 24), pick(&mut rng, &[1, 3, 8]), pick(&mut rng, &[1, 3, 5]));
        let (gh, gw) = (range(&mut rng, 1, h.min(6)), range(&mut rng, 1, w.min(6)));
        let detail = format!("h={h} w={w} c={c} k={k} grid={gh}x{gw}");

        let weights = Tensor::randn(Shape::new(1, gh, gw, k * k * c), 0.5, &mut rng);
        let zero_bias = vec![0.0; gh * gw * c];
        let g = KernelGrid::from_parts(weights.data(), &zero_bias, (1, gh, gw), c, k)?;
        let (x1, x2) = (Tensor::randn(Shape::new(1, h, w, c), 1.0, &mut rng), Tensor::randn(Shape::new(1, h, w, c), 1.0, &mut rng));
        let (a, b) = (rng.uniform_range(-2.0, 2.0), rng.uniform_range(-2.0, 2.0));
        let mix = Tensor::new(x1.shape(), x1.data().iter().zip(x2.data()).map(|(p, q)| a * p + b * q).collect())?;
        let (y1, y2) = (slice_apply_fused(&x1, &g)?, slice_apply_fused(&x2, &g)?);
        let lin = Tensor::new(y1.shape(), y1.data().iter().zip(y2.data()).map(|(p, q)| a * p + b * q).collect())?;
        let err = max_abs_diff(&slice_apply_fused(&mix, &g)?, &lin)?;
        report.cases.push(case(format!("linearity#{i:02}"), format!("{detail} a={a:.3} b={b:.3}"), err, ORACLE_TOL));

        let kw = Tensor::randn(Shape::new(1, k, k, c), 0.5, &mut rng);
        let kb = Tensor::randn(Shape::new(1, 1, 1, c), 0.5, &mut rng);
        let uniform = KernelGrid::uniform(&kw, &kb, (1, gh, gw))?;
        let err = max_abs_diff(&slice_apply_fused(&x1, &uniform)?, &depthwise_conv2d(&x1, k, &kw, Some(&kb))?)?;
        report.cases.push(case(format!("constant_grid#{i:02}"), detail.clone(), err, CONSTANT_GRID_TOL));

        let g = random_grid(1, gh, gw, c, k, &mut rng)?;
        let (row, col) = (rng.below(gh), rng.below(gw));
        let (cw, cb) = g.cell_kernel(0, row, col)?;
        let swapped = kernel_swap_apply(&x1, &g, row, col)?;
        let exact = swapped == depthwise_conv2d(&x1, k, &cw, Some(&cb))?;
        let err = if exact { 0.0 } else { f32::INFINITY };
        report.cases.push(case(format!("kernel_swap#{i:02}"), format!("{detail} cell={row},{col} bit-exact={exact}"), err, f32::MIN_POSITIVE));
    }
    Ok(report)
}

struct GradCase {
    name: &'static str,
    names: Vec<String>,
    inputs: Vec<Tensor>,
    graph: Box<Graph<'static>>,
    detail: String,
    /// Inputs from this index on are reported as one flattened `params` tensor.
    params_from: Option<usize>,
}

fn randn(s: Shape, rng: &mut Rng) -> Tensor {
    Tensor::randn(s, 1.0, rng)
}

fn random_shape(rng: &mut Rng, even: bool) -> Shape {
    let dim = |rng: &mut Rng| if even { 2 * range(rng, 1, 4) } else { range(rng, 1, 8) };
    let (n, h, w) = (range(rng, 1, 2), dim(rng), dim(rng));
    Shape::new(n, h, w, range(rng, 1, 4))
}

fn unary(name: &'static str, x: Tensor, f: impl Fn(&mut Tape, Var) -> Result<Var> + 'static) -> GradCase {
    let detail = format!("x={}", x.shape());
    GradCase { name, names: vec!["x".into()], inputs: vec![x], graph: Box::new(move |t, v| f(t, v[0])), detail, params_from: None }
}

fn binary(name: &'static str, a: Tensor, b: Tensor, f: impl Fn(&mut Tape, Var, Var) -> Result<Var> + 'static) -> GradCase {
    let detail = format!("a={} b={}", a.shape(), b.shape());
    GradCase { name, names: vec!["a".into(), "b".into()], inputs: vec![a, b], graph: Box::new(move |t, v| f(t, v[0], v[1])), detail, params_from: None }
}

fn conv_case(name: &'static str, spec: ConvSpec, x: Tensor, rng: &mut Rng) -> GradCase {
    let w = randn(spec.weight_shape(), rng);
    let b = randn(spec.bias_shape(), rng);
    let detail = format!("x={} k={} stride={} {:?}", x.shape(), spec.k, spec.stride, spec.padding);
    GradCase {
        name,
        names: vec!["x".into(), "w".into(), "b".into()],
        inputs: vec![x, w, b],
        graph: Box::new(move |t, v| t.conv2d(v[0], &spec, v[1], Some(v[2]))),
        detail,
        params_from: None,
    }
}

pub const GRAD_OPS: [&str; 26] = [
    "add", "add_scalar", "sub", "mul", "mul_scalar", "scale", "sum", "mean", "conv2d", "conv2d_depthwise", "conv2d_strided",
    "avg_pool", "max_pool", "bilinear_resize", "space_to_channel", "channel_to_space", "relu", "add_bias", "concat",
    "reflect_pad", "crop", "mse_loss", "slice_apply_k1", "slice_apply_k3", "conv_relu_pool", "malleconv_layer",
];

fn build_case(op: &'static str, rng: &mut Rng) -> Result<GradCase> {
    let s = random_shape(rng, false);
    Ok(match op {
        "add" => binary(op, randn(s, rng), randn(s, rng), |t, a, b| t.add(a, b)),
        "add_scalar" => binary(op, randn(s, rng), randn(Shape::scalar(), rng), |t, a, b| t.add(a, b)),
        "sub" => binary(op, randn(s, rng), randn(s, rng), |t, a, b| t.sub(a, b)),
        "mul" => binary(op, randn(s, rng), randn(s, rng), |t, a, b| t.mul(a, b)),
        "mul_scalar" => binary(op, randn(s, rng), randn(Shape::scalar(), rng), |t, a, b| t.mul(a, b)),
        "scale" => {
            let k = rng.uniform_range(-2.0, 2.0);
            unary(op, randn(s, rng), move |t, x| t.scale(x, k))
        }
        "sum" => unary(op, randn(s, rng), |t, x| t.sum(x)),
        "mean" => unary(op, randn(s, rng), |t, x| t.mean(x)),
        "conv2d" => {
            let spec = ConvSpec::same(pick(rng, &[1, 3]), s.c, range(rng, 1, 4));
            conv_case(op, spec, randn(s, rng), rng)
        }
        "conv2d_depthwise" => conv_case(op, ConvSpec::depthwise(pick(rng, &[1, 3, 5]), s.c), randn(s, rng), rng),
        "conv2d_strided" => {
            let s = Shape::new(s.n, range(rng, 3, 8), range(rng, 3, 8), s.c);
            let padding = pick(rng, &[Padding::Same, Padding::Valid]);
            let spec = ConvSpec { k: 3, c_in: s.c, c_out: range(rng, 1, 4), stride: 2, padding, depthwise: false };
            conv_case(op, spec, randn(s, rng), rng)
        }
        "avg_pool" => unary(op, randn(random_shape(rng, true), rng), |t, x| t.avg_pool(x, 2)),
        "max_pool" => unary(op, randn(random_shape(rng, true), rng), |t, x| t.max_pool(x, 2)),
        "bilinear_resize" => {
            let (oh, ow) = (range(rng, 1, 8), range(rng, 1, 8));
            unary(op, randn(s, rng), move |t, x| t.bilinear_resize(x, oh, ow))
        }
        "space_to_channel" => unary(op, randn(random_shape(rng, true), rng), |t, x| t.space_to_channel(x, 2)),
        "channel_to_space" => {
            let s = Shape::new(s.n, range(rng, 1, 4), range(rng, 1, 4), 4);
            unary(op, randn(s, rng), |t, x| t.channel_to_space(x, 2))
        }
        "relu" => unary(op, randn(s, rng), |t, x| t.relu(x)),
        "add_bias" => binary(op, randn(s, rng), randn(Shape::new(1, 1, 1, s.c), rng), |t, a, b| t.add_bias(a, b)),
        "concat" => binary(op, randn(s, rng), randn(s.with_c(range(rng, 1, 4)), rng), |t, a, b| t.concat(a, b)),
        "reflect_pad" => {
            let (oh, ow) = (range(rng, s.h, (2 * s.h - 1).max(s.h)), range(rng, s.w, (2 * s.w - 1).max(s.w)));
            unary(op, randn(s, rng), move |t, x| t.reflect_pad(x, oh, ow))
        }
        "crop" => {
            let (oh, ow) = (range(rng, 1, s.h), range(rng, 1, s.w));
            unary(op, randn(s, rng), move |t, x| t.crop(x, oh, ow))
        }
        "mse_loss" => binary(op, randn(s, rng), randn(s, rng), |t, a, b| t.mse_loss(a, b)),
        "slice_apply_k1" | "slice_apply_k3" => {
            let k = if op == "slice_apply_k1" { 1 } else { 3 };
            let (gh, gw) = (range(rng, 1, s.h), range(rng, 1, s.w));
            let gs = Shape::new(s.n, gh, gw, 0);
            let x = randn(s, rng);
            let gwt = Tensor::randn(gs.with_c(k * k * s.c), 0.5, rng);
            let gb = randn(gs.with_c(s.c), rng);
            GradCase {
                name: op,
                names: vec!["x".into(), "grid_weights".into(), "grid_bias".into()],
                inputs: vec![x, gwt, gb],
                graph: Box::new(move |t, v| {
                    let grid = t.concat(v[1], v[2])?;
                    t.slice_apply(v[0], grid, k)
                }),
                detail: format!("x={s} k={k} grid={gh}x{gw}"),
                params_from: None,
            }
        }
        "conv_relu_pool" => {
            let s = random_shape(rng, true);
            let spec = ConvSpec::same(3, s.c, range(rng, 1, 4));
            let mut c = conv_case(op, spec, randn(s, rng), rng);
            let inner = c.graph;
            c.graph = Box::new(move |t, v| {
                let y = inner(t, v)?;
                let y = t.relu(y)?;
                t.max_pool(y, 2)
            });
            c
        }
        "malleconv_layer" => {
            let cfg = PredictorConfig { k: pick(rng, &[1, 3]), channels: range(rng, 1, 3), width: 3, pool: 1 };
            let x = Tensor::randn(Shape::new(1, 2 * range(rng, 1, 3), 2 * range(rng, 1, 3), cfg.channels), 1.0, rng);
            let params: Vec<(String, Shape)> = cfg.param_shapes();
            let mut names = vec!["x".to_string()];
            let mut inputs = vec![x.clone()];
            // Small weights and positive biases keep the trunk away from relu
            // kinks, which the relu and max_pool cases cover on their own.
            for (n, shape) in &params {
                names.push(n.clone());
                let t = if n.ends_with(".b") { Tensor::randn(*shape, 0.1, rng).map("bias", |v| v + 1.0)? } else { Tensor::randn(*shape, 0.1, rng) };
                inputs.push(t);
            }
            let detail = format!("x={} k={} width={}", x.shape(), cfg.k, cfg.width);
            let order: Vec<String> = params.into_iter().map(|(n, _)| n).collect();
            GradCase {
                name: op,
                names,
                inputs,
                graph: Box::new(move |t, v| {
                    let mut lookup = |_: &mut Tape, n: &str| {
                        let i = order.iter().position(|o| o == n).expect("predictor parameter");
                        Ok(v[1 + i])
                    };
                    let grid = predictor_tape(t, v[0], &cfg, &mut lookup)?;
                    t.slice_apply(v[0], grid, cfg.k)
                }),
                detail,
                params_from: Some(1),
            }
        }
        _ => unreachable!("unknown gradient op {op}"),
    })
}

/// Finite-difference checks of every differentiable op over `seeds` random
/// shapes each (at most `(2, 8, 8, 4)`).
pub fn grad_suite(seeds: usize, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::default();
    for op in GRAD_OPS {
        for s in 0..seeds {
            let mut rng = Rng::keyed(seed, &format!("grad/{op}/{s}"));
            let c = build_case(op, &mut rng)?;
            let names: Vec<&str> = c.names.iter().map(String::as_str).collect();
            let mut checks = check_gradients(&*c.graph, &names, &c.inputs, rng.next_u64())?;
            if let Some(i) = c.params_from {
                let params = GradCheck::merge("params", &checks[i..]);
                checks.truncate(i);
                checks.push(params);
            }
            for g in checks {
                let detail = format!("{} wrt={} skipped={}/{}", c.detail, g.input, g.skipped, g.coords);
                let passed = g.passed(FD_TOL);
                report.cases.push(CaseResult { name: format!("{}#{s:02}", c.name), detail, error: g.error, tol: FD_TOL, passed });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_oracle_suite_passes() {
        let r = oracle_suite(20, 1).unwrap();
        assert!(r.passed(), "{:#?}", r.cases.iter().filter(|c| !c.passed).collect::<Vec<_>>());
        assert_eq!(r.cases.len(), 20 + 3 * 3);
    }

    #[test]
    fn every_op_builds() {
        let mut rng = Rng::new(4);
        for op in GRAD_OPS {
            let c = build_case(op, &mut rng).unwrap();
            let mut t = Tape::new();
            let vars: Vec<Var> = c.inputs.iter().map(|x| t.input(x.clone())).collect();
            (c.graph)(&mut t, &vars).unwrap();
        }
    }
}

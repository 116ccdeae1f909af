use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nanoformer::{loss_and_grads, ModelConfig, TokenBatch};
use crate::params::Params;
use crate::rng::SeededRng;
use crate::tensor::{matmul, Tensor};

/// Anything that can produce an exact gradient at a parameter point.
pub trait GradientOracle {
    fn gradient(&self, params: &Params) -> Result<Params>;
}

impl<F> GradientOracle for F
where
    F: Fn(&Params) -> Result<Params>,
{
    fn gradient(&self, params: &Params) -> Result<Params> {
        self(params)
    }
}

/// Training loss of a model on one fixed batch.
pub struct ModelOracle<'a> {
    pub cfg: &'a ModelConfig,
    pub tokens: &'a TokenBatch,
    pub targets: &'a TokenBatch,
}

impl GradientOracle for ModelOracle<'_> {
    fn gradient(&self, params: &Params) -> Result<Params> {
        Ok(loss_and_grads(self.cfg, params, self.tokens, self.targets)?.grads)
    }
}

/// `f(w) = ½·wᵀAw` over a single parameter named `w`, with gradient `Aw`.
#[derive(Debug, Clone)]
pub struct QuadraticFixture {
    a: Tensor,
}

impl QuadraticFixture {
    pub const PARAM: &'static str = "w";

    pub fn new(a: Tensor) -> Result<Self> {
        let (m, n) = a.matrix_dims()?;
        if m != n {
            return Err(Error::Dimension(format!(
                "quadratic form needs a square matrix, got {m}x{n}"
            )));
        }
        Ok(Self { a })
    }

    pub fn diagonal(entries: &[f64]) -> Result<Self> {
        let n = entries.len();
        if n == 0 {
            return Err(Error::Domain("empty diagonal".into()));
        }
        let mut a = Tensor::zeros(&[n, n]);
        for (i, &e) in entries.iter().enumerate() {
            a.data_mut()[i * n + i] = e;
        }
        Self::new(a)
    }

    pub fn dim(&self) -> usize {
        self.a.shape()[0]
    }

    pub fn matrix(&self) -> &Tensor {
        &self.a
    }

    pub fn params(&self, w: Vec<f64>) -> Result<Params> {
        let mut p = Params::new();
        p.insert(Self::PARAM, Tensor::new(vec![self.dim()], w)?);
        Ok(p)
    }

    fn apply(&self, w: &Tensor) -> Result<Tensor> {
        let col = Tensor::new(vec![self.dim(), 1], w.data().to_vec())?;
        Tensor::new(w.shape().to_vec(), matmul(&self.a, &col)?.into_data())
    }

    pub fn loss(&self, params: &Params) -> Result<f64> {
        let w = params.get(Self::PARAM)?;
        let aw = self.apply(w)?;
        Ok(0.5 * w.data().iter().zip(aw.data()).map(|(x, y)| x * y).sum::<f64>())
    }
}

impl GradientOracle for QuadraticFixture {
    fn gradient(&self, params: &Params) -> Result<Params> {
        let mut g = Params::new();
        g.insert(Self::PARAM, self.apply(params.get(Self::PARAM)?)?);
        Ok(g)
    }
}

/// `Hv ≈ (∇L(w + εv) − ∇L(w − εv)) / 2ε` with `ε = 1e-3/‖v‖`.
pub fn hessian_vector_product(oracle: &dyn GradientOracle, params: &Params, v: &Params) -> Result<Params> {
    params.expect_same_layout(v)?;
    let norm = v.l2_norm();
    if norm == 0.0 {
        return Err(Error::Domain("Hessian-vector product needs a nonzero direction".into()));
    }
    let eps = 1e-3 / norm;
    let mut plus = params.clone();
    plus.axpy(eps, v)?;
    let mut minus = params.clone();
    minus.axpy(-eps, v)?;
    let mut hv = oracle.gradient(&plus)?;
    hv.axpy(-1.0, &oracle.gradient(&minus)?)?;
    hv.scale_in_place(0.5 / eps);
    Ok(hv)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureOptions {
    /// Maximum power iterations.
    pub iters: usize,
    /// Stop once `‖Hv − λv‖ ≤ tol·max(|λ|, 1)`.
    pub tol: f64,
    /// Rademacher probes for the trace estimate.
    pub probes: usize,
    pub seed: u64,
}

impl Default for CurvatureOptions {
    fn default() -> Self {
        Self {
            iters: 200,
            tol: 1e-8,
            probes: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureReport {
    pub top_eigenvalue: f64,
    pub trace_estimate: f64,
    pub probes_used: usize,
    pub power_iters: usize,
    /// `‖Hv − λv‖ / ‖v‖` at the final iterate.
    pub residual: f64,
}

fn random_direction(template: &Params, rng: &mut SeededRng, draw: impl Fn(&mut SeededRng) -> f64) -> Params {
    let mut v = template.zeros_like();
    for (_, t) in v.iter_mut() {
        for x in t.data_mut() {
            *x = draw(rng);
        }
    }
    v
}

/// Dominant Hessian eigenvalue by power iteration, plus a Hutchinson trace
/// estimate. Running out of iterations is not an error; the residual shows
/// how far from converged the estimate is.
pub fn top_eigenvalue(
    oracle: &dyn GradientOracle,
    params: &Params,
    opts: &CurvatureOptions,
) -> Result<CurvatureReport> {
    if opts.iters == 0 {
        return Err(Error::Domain("power iteration needs at least one iteration".into()));
    }
    if opts.probes == 0 {
        return Err(Error::Domain("trace estimate needs at least one probe".into()));
    }
    let mut rng = SeededRng::derived(opts.seed, &[0x6375_7276]);
    let mut v = random_direction(params, &mut rng, SeededRng::standard_normal);
    v.scale_in_place(1.0 / v.l2_norm());

    let mut lambda = 0.0;
    let mut residual = f64::INFINITY;
    let mut iters = 0;
    while iters < opts.iters {
        iters += 1;
        let hv = hessian_vector_product(oracle, params, &v)?;
        lambda = v.dot(&hv)?;
        let mut r = hv.clone();
        r.axpy(-lambda, &v)?;
        residual = r.l2_norm();
        if residual <= opts.tol * lambda.abs().max(1.0) {
            break;
        }
        let n = hv.l2_norm();
        if n == 0.0 {
            break;
        }
        v = hv.scaled(1.0 / n);
    }

    let mut trace = 0.0;
    for _ in 0..opts.probes {
        let z = random_direction(params, &mut rng, SeededRng::rademacher);
        trace += z.dot(&hessian_vector_product(oracle, params, &z)?)?;
    }
    log::debug!("power iteration stopped after {iters} iterations, residual {residual:.3e}");
    Ok(CurvatureReport {
        top_eigenvalue: lambda,
        trace_estimate: trace / opts.probes as f64,
        probes_used: opts.probes,
        power_iters: iters,
        residual,
    })
}

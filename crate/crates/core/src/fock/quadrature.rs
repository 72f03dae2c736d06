//! Gauss–Legendre rules and composite integration on finite intervals.

use crate::scalar::{from_usize, lit, Real};

/// Quadrature points beyond which every Hermite function up to the supported
/// photon number is below `f64` resolution.
pub const QUADRATURE_EDGE: f64 = 12.0;

/// Widest panel used by [`GaussLegendre::integrate`].
const PANEL_WIDTH: f64 = 0.5;

/// An `n`-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct GaussLegendre<R> {
    nodes: Vec<R>,
    weights: Vec<R>,
}

impl<R: Real> GaussLegendre<R> {
    /// Build the rule by Newton iteration on the Legendre polynomial.
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "quadrature order must be positive");
        let n = order;
        let mut nodes = vec![R::zero(); n];
        let mut weights = vec![R::zero(); n];
        let one = R::one();
        let two: R = lit(2.0);
        let eps: R = R::default_epsilon() * lit(4.0);
        for i in 0..n.div_ceil(2) {
            let guess = (R::PI() * (from_usize::<R>(i) + lit(0.75)) / (from_usize::<R>(n) + lit(0.5))).cos();
            let mut x = guess;
            let mut dp = R::one();
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() <= eps {
                    let (_, d) = legendre_with_derivative(n, x);
                    dp = d;
                    break;
                }
            }
            let w = two / ((one - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = R::zero();
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Nodes and weights mapped onto `[a, b]`.
    pub fn mapped(&self, a: R, b: R) -> impl Iterator<Item = (R, R)> + '_ {
        let half: R = (b - a) * lit(0.5);
        let mid: R = (a + b) * lit(0.5);
        self.nodes.iter().zip(&self.weights).map(move |(&x, &w)| (mid + half * x, half * w))
    }

    /// Composite rule: `[a, b]` is split into panels no wider than 0.5 and
    /// each panel gets this rule. Infinite ends are clipped to
    /// [`QUADRATURE_EDGE`].
    pub fn integrate<F: FnMut(R) -> R>(&self, a: R, b: R, mut f: F) -> R {
        let mut acc = R::zero();
        for_each_node(self, a, b, |x, w| acc += w * f(x));
        acc
    }
}

/// Visit every composite-rule node on `[a, b]` (see [`GaussLegendre::integrate`]).
pub(crate) fn for_each_node<R: Real, F: FnMut(R, R)>(rule: &GaussLegendre<R>, a: R, b: R, mut f: F) {
    let edge: R = lit(QUADRATURE_EDGE);
    let a = a.max(-edge);
    let b = b.min(edge);
    if b <= a {
        return;
    }
    let width = b - a;
    let panels = (crate::scalar::to_f64(width) / PANEL_WIDTH).ceil().max(1.0) as usize;
    let step = width / from_usize::<R>(panels);
    for p in 0..panels {
        let lo = a + step * from_usize::<R>(p);
        let hi = if p + 1 == panels { b } else { lo + step };
        for (x, w) in rule.mapped(lo, hi) {
            f(x, w);
        }
    }
}

fn legendre_with_derivative<R: Real>(n: usize, x: R) -> (R, R) {
    let mut p0 = R::one();
    let mut p1 = x;
    for k in 2..=n {
        let k_r: R = from_usize(k);
        let p2 = ((lit::<R>(2.0) * k_r - R::one()) * x * p1 - (k_r - R::one()) * p0) / k_r;
        p0 = p1;
        p1 = p2;
    }
    let n_r: R = from_usize(n);
    let d = n_r * (x * p1 - p0) / (x * x - R::one());
    (p1, d)
}

/// Default rule used for all window and bin integrals.
pub fn default_rule<R: Real>() -> GaussLegendre<R> {
    GaussLegendre::new(20)
}

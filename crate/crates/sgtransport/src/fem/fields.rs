//! Scalar coefficient fields on a factor domain and separable (rank-R)
//! fields on the full product domain.

use std::fmt;
use std::sync::Arc;

type FieldFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A scalar field `(t, p) -> w(t, p)` on one factor domain. Constant fields
/// are tagged so assembly can exploit translation invariance, and fields that
/// do not depend on `t` allow strip-system caching.
#[derive(Clone)]
pub struct ScalarField {
    kind: FieldKind,
    time_dependent: bool,
}

#[derive(Clone)]
enum FieldKind {
    Constant(f64),
    Function(FieldFn),
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            FieldKind::Constant(c) => write!(f, "ScalarField::Constant({c})"),
            FieldKind::Function(_) => {
                write!(f, "ScalarField::Function(time_dependent={})", self.time_dependent)
            }
        }
    }
}

impl ScalarField {
    pub fn constant(c: f64) -> Self {
        ScalarField { kind: FieldKind::Constant(c), time_dependent: false }
    }

    pub fn one() -> Self {
        Self::constant(1.0)
    }

    /// Spatial field without time dependence.
    pub fn function<F>(f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        ScalarField {
            kind: FieldKind::Function(Arc::new(move |_t, p| f(p))),
            time_dependent: false,
        }
    }

    pub fn time_function<F>(f: F) -> Self
    where
        F: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        ScalarField { kind: FieldKind::Function(Arc::new(f)), time_dependent: true }
    }

    pub fn eval(&self, t: f64, p: &[f64]) -> f64 {
        match &self.kind {
            FieldKind::Constant(c) => *c,
            FieldKind::Function(f) => f(t, p),
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match &self.kind {
            FieldKind::Constant(c) => Some(*c),
            FieldKind::Function(_) => None,
        }
    }

    pub fn is_time_dependent(&self) -> bool {
        self.time_dependent
    }

    /// Pointwise product of two fields.
    pub fn product(&self, other: &ScalarField) -> ScalarField {
        match (&self.kind, &other.kind) {
            (FieldKind::Constant(a), FieldKind::Constant(b)) => ScalarField::constant(a * b),
            _ => {
                let (a, b) = (self.clone(), other.clone());
                ScalarField {
                    kind: FieldKind::Function(Arc::new(move |t, p| a.eval(t, p) * b.eval(t, p))),
                    time_dependent: self.time_dependent || other.time_dependent,
                }
            }
        }
    }
}

/// One rank-1 term `c(t) * g(x) * h(v)` of a separable field.
#[derive(Clone)]
pub struct Rank1Term {
    pub time: Option<TimeFn>,
    pub x: ScalarField,
    pub v: ScalarField,
}

impl fmt::Debug for Rank1Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Rank1Term(time={}, x={:?}, v={:?})", self.time.is_some(), self.x, self.v)
    }
}

impl Rank1Term {
    pub fn new(x: ScalarField, v: ScalarField) -> Self {
        Rank1Term { time: None, x, v }
    }

    pub fn with_time<F>(mut self, f: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        self.time = Some(Arc::new(f));
        self
    }

    pub fn time_coeff(&self, t: f64) -> f64 {
        self.time.as_ref().map_or(1.0, |f| f(t))
    }

    pub fn is_time_dependent(&self) -> bool {
        self.time.is_some() || self.x.is_time_dependent() || self.v.is_time_dependent()
    }
}

/// Separable field `sum_rho c_rho(t) g_rho(x) h_rho(v)` on the product domain.
#[derive(Clone, Debug, Default)]
pub struct SeparableField {
    pub terms: Vec<Rank1Term>,
}

impl SeparableField {
    pub fn zero() -> Self {
        SeparableField { terms: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        SeparableField {
            terms: vec![Rank1Term::new(ScalarField::constant(c), ScalarField::one())],
        }
    }

    pub fn rank1(x: ScalarField, v: ScalarField) -> Self {
        SeparableField { terms: vec![Rank1Term::new(x, v)] }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, t: f64, x: &[f64], v: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|r| r.time_coeff(t) * r.x.eval(t, x) * r.v.eval(t, v))
            .sum()
    }

    pub fn is_time_dependent(&self) -> bool {
        self.terms.iter().any(|r| r.is_time_dependent())
    }
}

/// `sin(2 pi sum_i (x_i + v_i) + phase)` expanded by angle addition into the
/// rank-2 separable form `sin(a + phase) cos(b) + cos(a + phase) sin(b)` with
/// `a = 2 pi sum x_i`, `b = 2 pi sum v_i`.
pub fn sine_sum_mode(dim: usize, phase: f64) -> SeparableField {
    use std::f64::consts::TAU;
    let sx = move |p: &[f64]| (TAU * p[..dim].iter().sum::<f64>() + phase).sin();
    let cx = move |p: &[f64]| (TAU * p[..dim].iter().sum::<f64>() + phase).cos();
    let sv = move |p: &[f64]| (TAU * p[..dim].iter().sum::<f64>()).sin();
    let cv = move |p: &[f64]| (TAU * p[..dim].iter().sum::<f64>()).cos();
    SeparableField {
        terms: vec![
            Rank1Term::new(ScalarField::function(sx), ScalarField::function(cv)),
            Rank1Term::new(ScalarField::function(cx), ScalarField::function(sv)),
        ],
    }
}

//! Initial data `(rho_0, m_0)(x)` on the real line.

use std::fmt;
use std::sync::Arc;

use crate::state::{Invariants, State, StateError};

type ProfileFn = Arc<dyn Fn(f64) -> State + Send + Sync>;

/// Piecewise-constant table or a closed-form profile.
///
/// A piecewise table with breaks `b_0 < ... < b_{n-1}` holds `states[0]` on
/// `(-inf, b_0)`, `states[i]` on `[b_{i-1}, b_i)` and `states[n]` beyond.
/// Closed-form profiles are constant outside their `support`.
#[derive(Clone)]
pub enum InitialData {
    Piecewise {
        breaks: Vec<f64>,
        states: Vec<State>,
    },
    Analytic {
        label: String,
        support: (f64, f64),
        profile: ProfileFn,
    },
}

impl fmt::Debug for InitialData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialData::Piecewise { breaks, states } => f
                .debug_struct("Piecewise")
                .field("breaks", breaks)
                .field("states", states)
                .finish(),
            InitialData::Analytic { label, support, .. } => f
                .debug_struct("Analytic")
                .field("label", label)
                .field("support", support)
                .finish(),
        }
    }
}

// 5-point Gauss-Legendre nodes and weights on [-1, 1].
const GL5: [(f64, f64); 5] = [
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.0, 0.568_888_888_888_888_9),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

impl InitialData {
    /// Piecewise data from `(x_start, state)` rows; the first row's state
    /// also extends to the left of its `x_start`.
    pub fn from_rows(rows: &[(f64, State)]) -> Result<Self, String> {
        if rows.is_empty() {
            return Err("initial table is empty".into());
        }
        if rows.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err("initial table x values must be strictly increasing".into());
        }
        Ok(InitialData::Piecewise {
            breaks: rows[1..].iter().map(|r| r.0).collect(),
            states: rows.iter().map(|r| r.1).collect(),
        })
    }

    pub fn riemann(left: State, right: State, at: f64) -> Self {
        InitialData::Piecewise {
            breaks: vec![at],
            states: vec![left, right],
        }
    }

    pub fn constant(u: State) -> Self {
        InitialData::Piecewise {
            breaks: Vec::new(),
            states: vec![u],
        }
    }

    pub fn analytic(
        label: impl Into<String>,
        support: (f64, f64),
        profile: impl Fn(f64) -> State + Send + Sync + 'static,
    ) -> Self {
        InitialData::Analytic {
            label: label.into(),
            support,
            profile: Arc::new(profile),
        }
    }

    pub fn is_piecewise(&self) -> bool {
        matches!(self, InitialData::Piecewise { .. })
    }

    /// Value at `x`; on a break the right state is returned.
    pub fn state_at(&self, x: f64) -> State {
        match self {
            InitialData::Piecewise { breaks, states } => {
                states[breaks.partition_point(|&b| b <= x)]
            }
            InitialData::Analytic {
                support, profile, ..
            } => profile(x.clamp(support.0, support.1)),
        }
    }

    /// Jump locations (empty for closed-form data).
    pub fn breaks(&self) -> &[f64] {
        match self {
            InitialData::Piecewise { breaks, .. } => breaks,
            InitialData::Analytic { .. } => &[],
        }
    }

    /// Mean of the data over `(a, b)`.
    pub fn average(&self, a: f64, b: f64) -> State {
        debug_assert!(b > a);
        match self {
            InitialData::Piecewise { breaks, states } => {
                let mut acc = State::new(0.0, 0.0);
                let mut lo = a;
                let mut i = breaks.partition_point(|&x| x <= a);
                while lo < b {
                    let hi = if i < breaks.len() {
                        breaks[i].min(b)
                    } else {
                        b
                    };
                    acc = acc + states[i] * (hi - lo);
                    lo = hi;
                    i += 1;
                }
                acc * (1.0 / (b - a))
            }
            InitialData::Analytic { .. } => {
                let pieces = 8;
                let dx = (b - a) / pieces as f64;
                let mut acc = State::new(0.0, 0.0);
                for p in 0..pieces {
                    let mid = a + (p as f64 + 0.5) * dx;
                    for &(node, weight) in &GL5 {
                        acc = acc + self.state_at(mid + 0.5 * dx * node) * (0.5 * weight * dx);
                    }
                }
                acc * (1.0 / (b - a))
            }
        }
    }

    /// Points at which the data attains every value it takes on `[a, b]`
    /// (exactly for tables, on a dense grid for closed-form profiles).
    pub fn scan(&self, a: f64, b: f64) -> Vec<(f64, State)> {
        match self {
            InitialData::Piecewise { breaks, .. } => {
                let mut xs = vec![a];
                xs.extend(breaks.iter().copied().filter(|&x| x > a && x <= b));
                xs.into_iter().map(|x| (x, self.state_at(x))).collect()
            }
            InitialData::Analytic { support, .. } => {
                let n = 20_000;
                let mut xs: Vec<f64> = (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect();
                xs.extend([support.0, support.1].iter().filter(|&&x| x > a && x < b));
                xs.into_iter().map(|x| (x, self.state_at(x))).collect()
            }
        }
    }

    /// Invariants at the scanned points.
    pub fn scan_invariants(&self, a: f64, b: f64) -> Result<Vec<(f64, Invariants)>, StateError> {
        self.scan(a, b)
            .into_iter()
            .map(|(x, u)| u.invariants().map(|iv| (x, iv)))
            .collect()
    }
}

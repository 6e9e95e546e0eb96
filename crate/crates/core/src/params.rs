//! Building blocks shared by every parameter tree.
//!
//! Trees are generic over the leaf type: `Mat<F>` for stored weights, `Var` once bound to a
//! tape. `map` visits leaves in declaration order, which is also checkpoint order and the
//! index order used by the tape.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::tensor::{Mat, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Embedding,
    Attention,
    FeedForward,
    Norm,
    Output,
    Spd,
    Rrwp,
    Mag,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 8] = [
        Self::Embedding,
        Self::Attention,
        Self::FeedForward,
        Self::Norm,
        Self::Output,
        Self::Spd,
        Self::Rrwp,
        Self::Mag,
    ];

    pub fn is_bias(self) -> bool {
        matches!(self, Self::Spd | Self::Rrwp | Self::Mag)
    }
}

pub type Visitor<'a, 'b, T, U> = &'b mut dyn FnMut(String, ParamGroup, &'a T) -> U;

/// `x·W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine<T> {
    pub w: T,
    pub b: T,
}

impl<T> Affine<T> {
    pub fn map<'a, U>(&'a self, name: &str, group: ParamGroup, f: Visitor<'a, '_, T, U>) -> Affine<U> {
        Affine { w: f(format!("{name}.w"), group, &self.w), b: f(format!("{name}.b"), group, &self.b) }
    }

    pub fn visit_mut(&mut self, group: ParamGroup, f: &mut dyn FnMut(ParamGroup, &mut T)) {
        f(group, &mut self.w);
        f(group, &mut self.b);
    }
}

impl<F: Real> Affine<Mat<F>> {
    /// Weights uniform in `±1/√fan_in`, zero offsets.
    pub fn init(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Self {
        Self { w: uniform(rng, fan_in, fan_out, 1.0 / (fan_in as f64).sqrt()), b: Mat::zeros(1, fan_out) }
    }
}

impl Affine<Var> {
    pub fn apply<F: Real>(&self, tape: &mut Tape<F>, x: Var) -> Var {
        let y = tape.matmul(x, self.w);
        tape.add_row(y, self.b)
    }
}

/// Affine, smooth ramp, affine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    pub hidden: Affine<T>,
    pub out: Affine<T>,
}

impl<T> Mlp<T> {
    pub fn map<'a, U>(&'a self, name: &str, group: ParamGroup, f: Visitor<'a, '_, T, U>) -> Mlp<U> {
        Mlp { hidden: self.hidden.map(&format!("{name}.hidden"), group, f), out: self.out.map(&format!("{name}.out"), group, f) }
    }

    pub fn visit_mut(&mut self, group: ParamGroup, f: &mut dyn FnMut(ParamGroup, &mut T)) {
        self.hidden.visit_mut(group, f);
        self.out.visit_mut(group, f);
    }
}

impl<F: Real> Mlp<Mat<F>> {
    pub fn init(rng: &mut impl Rng, d_in: usize, d_hidden: usize, d_out: usize) -> Self {
        Self { hidden: Affine::init(rng, d_in, d_hidden), out: Affine::init(rng, d_hidden, d_out) }
    }

    /// Random hidden layer, zero output layer: the map starts at exactly 0.
    pub fn init_silent(rng: &mut impl Rng, d_in: usize, d_hidden: usize, d_out: usize) -> Self {
        Self { hidden: Affine::init(rng, d_in, d_hidden), out: Affine { w: Mat::zeros(d_hidden, d_out), b: Mat::zeros(1, d_out) } }
    }

    pub fn count(d_in: usize, d_hidden: usize, d_out: usize) -> usize {
        d_in * d_hidden + d_hidden + d_hidden * d_out + d_out
    }
}

impl Mlp<Var> {
    pub fn apply<F: Real>(&self, tape: &mut Tape<F>, x: Var) -> Var {
        let h = self.hidden.apply(tape, x);
        let h = tape.silu(h);
        self.out.apply(tape, h)
    }
}

pub fn uniform<F: Real>(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Mat<F> {
    Mat::from_fn(rows, cols, |_, _| F::of(rng.random_range(-scale..scale)))
}

//! Named parameters and plain gradient descent.

use rand::Rng;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle into a `ParamSet`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
pub struct Parameter<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub grad: Tensor<F>,
}

/// Ordered collection of named parameters. Order is insertion order and is
/// part of the checkpoint contract.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<F> {
    items: Vec<Parameter<F>>,
}

impl<F: Scalar> ParamSet<F> {
    pub fn new() -> Self {
        ParamSet { items: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> Result<ParamId> {
        let name = name.into();
        if self.items.iter().any(|p| p.name == name) {
            return Err(Error::DuplicateParam { name });
        }
        let grad = Tensor::zeros(value.rows(), value.cols());
        self.items.push(Parameter { name, value, grad });
        Ok(ParamId(self.items.len() - 1))
    }

    /// Add a matrix initialized uniformly in [-1/sqrt(fan_in), +1/sqrt(fan_in)],
    /// fan_in being the row count under the row-vector convention x * W.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        self.add_uniform_gain(name, rows, cols, 1.0, rng)
    }

    /// Same as `add_uniform` with the bound widened to gain/sqrt(fan_in).
    /// Plain full-batch descent at a small fixed step barely moves weights
    /// relative to their init scale, so stacks trained that way need the
    /// extra gain to produce useful logits within their epoch budget.
    pub fn add_uniform_gain(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        let bound = gain / (rows as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| F::from_real(rng.gen_range(-bound..bound)))
            .collect();
        self.add(name, Tensor::from_vec(rows, cols, data))
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn ids(&self) -> Vec<ParamId> {
        (0..self.items.len()).map(ParamId).collect()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.items[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.items[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor<F>) {
        assert_eq!(
            self.items[id.0].value.shape(),
            value.shape(),
            "set_value must keep the shape"
        );
        self.items[id.0].value = value;
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<F> {
        &self.items[id.0].grad
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.items.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<F>> {
        self.items.iter()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.items {
            p.grad = Tensor::zeros(p.value.rows(), p.value.cols());
        }
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &Tensor<F>) {
        self.items[id.0].grad.add_assign(g);
    }

    /// Copy of all values, for best-epoch snapshots.
    pub fn snapshot(&self) -> Vec<Tensor<F>> {
        self.items.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snap: &[Tensor<F>]) {
        assert_eq!(snap.len(), self.items.len(), "snapshot length");
        for (p, s) in self.items.iter_mut().zip(snap) {
            p.value = s.clone();
        }
    }
}

/// value -= lr * grad for every parameter. Aborts on the first non-finite
/// gradient, naming the offending parameter.
pub fn sgd_step<F: Scalar>(params: &mut ParamSet<F>, lr: F) -> Result<()> {
    for p in &mut params.items {
        if !p.grad.all_finite() {
            return Err(Error::NonFiniteGrad {
                name: p.name.clone(),
            });
        }
        p.value.add_assign_scaled(&p.grad, -lr);
    }
    Ok(())
}

/// Heavy-ball variant, off by default everywhere in the pipeline; kept behind
/// its own entry point so the plain step stays plain.
pub fn sgd_step_momentum<F: Scalar>(
    params: &mut ParamSet<F>,
    lr: F,
    beta: F,
    velocity: &mut Vec<Tensor<F>>,
) -> Result<()> {
    if velocity.is_empty() {
        *velocity = params
            .items
            .iter()
            .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
            .collect();
    }
    assert_eq!(velocity.len(), params.items.len(), "velocity length");
    for (p, v) in params.items.iter_mut().zip(velocity.iter_mut()) {
        if !p.grad.all_finite() {
            return Err(Error::NonFiniteGrad {
                name: p.name.clone(),
            });
        }
        let mut nv = v.map(|x| x * beta);
        nv.add_assign(&p.grad);
        p.value.add_assign_scaled(&nv, -lr);
        *v = nv;
    }
    Ok(())
}

/// First and second moment estimates, lazily shaped on the first step.
#[derive(Clone, Debug, Default)]
pub struct AdamState<F> {
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
    t: u32,
}

impl<F: Scalar> AdamState<F> {
    pub fn new() -> Self {
        AdamState {
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }
}

/// Adam with the usual bias correction. Useful where plain descent crawls,
/// e.g. L1 objectives whose subgradients carry no magnitude information.
pub fn adam_step<F: Scalar>(
    params: &mut ParamSet<F>,
    lr: F,
    state: &mut AdamState<F>,
) -> Result<()> {
    let beta1 = F::from_real(0.9);
    let beta2 = F::from_real(0.999);
    let eps = F::from_real(1e-8);
    let one = F::one();
    if state.m.is_empty() {
        for p in &params.items {
            state.m.push(Tensor::zeros(p.value.rows(), p.value.cols()));
            state.v.push(Tensor::zeros(p.value.rows(), p.value.cols()));
        }
    }
    assert_eq!(state.m.len(), params.items.len(), "state length");
    state.t += 1;
    let c1 = one - beta1.powi(state.t as i32);
    let c2 = one - beta2.powi(state.t as i32);
    for (i, p) in params.items.iter_mut().enumerate() {
        if !p.grad.all_finite() {
            return Err(Error::NonFiniteGrad {
                name: p.name.clone(),
            });
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let g = p.grad.data();
        let w = p.value.data_mut();
        for j in 0..g.len() {
            m[j] = beta1 * m[j] + (one - beta1) * g[j];
            v[j] = beta2 * v[j] + (one - beta2) * g[j] * g[j];
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            w[j] = w[j] - lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nd::Tape;

    type T = Tensor<f64>;

    #[test]
    fn duplicate_name_is_an_error() {
        let mut ps: ParamSet<f64> = ParamSet::new();
        ps.add("w", T::scalar(0.0)).unwrap();
        assert!(matches!(
            ps.add("w", T::scalar(1.0)),
            Err(Error::DuplicateParam { .. })
        ));
    }

    #[test]
    fn sgd_leaves_zero_grad_params_alone() {
        let mut ps: ParamSet<f64> = ParamSet::new();
        let id = ps.add("w", T::scalar(5.0)).unwrap();
        sgd_step(&mut ps, 0.5).unwrap();
        assert_eq!(ps.value(id).item(), 5.0);
    }

    #[test]
    fn sgd_hand_step() {
        let mut ps: ParamSet<f64> = ParamSet::new();
        let id = ps.add("w", T::scalar(1.0)).unwrap();
        ps.accumulate_grad(id, &T::scalar(1.0));
        sgd_step(&mut ps, 0.2).unwrap();
        assert!((ps.value(id).item() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_aborts_on_non_finite_grad_with_name() {
        let mut ps: ParamSet<f64> = ParamSet::new();
        let id = ps.add("bad_one", T::scalar(1.0)).unwrap();
        ps.accumulate_grad(id, &T::scalar(f64::NAN));
        match sgd_step(&mut ps, 0.1) {
            Err(Error::NonFiniteGrad { name }) => assert_eq!(name, "bad_one"),
            other => panic!("expected NonFiniteGrad, got {other:?}"),
        }
    }

    #[test]
    fn quadratic_bowl_converges_at_closed_form_rate() {
        // loss = p^2, gd with lr 0.1: p_k = p_0 * 0.8^k.
        let mut ps: ParamSet<f64> = ParamSet::new();
        let id = ps.add("p", T::scalar(1.0)).unwrap();
        for _ in 0..100 {
            let mut tape = Tape::new();
            let v = tape.param(&ps, id);
            let loss = tape.mul(v, v).unwrap();
            tape.backward(loss, &mut ps).unwrap();
            sgd_step(&mut ps, 0.1).unwrap();
        }
        let expect = 0.8f64.powi(100);
        assert!((ps.value(id).item() - expect).abs() < 1e-12);
        assert!(ps.value(id).item().abs() < 1e-4);
    }

    #[test]
    fn momentum_step_matches_hand_computation() {
        // grad constant 1; lr 0.1, beta 0.5.
        // v1 = 1, p1 = 1 - 0.1 = 0.9; v2 = 1.5, p2 = 0.9 - 0.15 = 0.75.
        let mut ps: ParamSet<f64> = ParamSet::new();
        let id = ps.add("p", T::scalar(1.0)).unwrap();
        let mut vel = Vec::new();
        for want in [0.9, 0.75] {
            ps.zero_grads();
            ps.accumulate_grad(id, &T::scalar(1.0));
            sgd_step_momentum(&mut ps, 0.1, 0.5, &mut vel).unwrap();
            assert!((ps.value(id).item() - want).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_first_step_is_bias_corrected() {
        // with bias correction the very first update is exactly lr * sign(g)
        // for any gradient magnitude well above eps
        for g in [1e-3, 1.0, 1e6] {
            let mut ps: ParamSet<f64> = ParamSet::new();
            let id = ps.add("p", T::scalar(0.0)).unwrap();
            let mut st = AdamState::new();
            ps.accumulate_grad(id, &T::scalar(g));
            adam_step(&mut ps, 0.1, &mut st).unwrap();
            assert!((ps.value(id).item() + 0.1).abs() < 1e-6, "grad {g}");
        }
    }

    #[test]
    fn adam_solves_the_l1_problem_plain_descent_crawls_on() {
        // loss = |p - 3|: the subgradient is +/-1 regardless of distance
        let run = |adam: bool| {
            let mut ps: ParamSet<f64> = ParamSet::new();
            let id = ps.add("p", T::scalar(0.0)).unwrap();
            let mut st = AdamState::new();
            for _ in 0..400 {
                ps.zero_grads();
                let g = if ps.value(id).item() >= 3.0 { 1.0 } else { -1.0 };
                ps.accumulate_grad(id, &T::scalar(g));
                if adam {
                    adam_step(&mut ps, 0.05, &mut st).unwrap();
                } else {
                    sgd_step(&mut ps, 0.001).unwrap();
                }
            }
            (ps.value(id).item() - 3.0).abs()
        };
        assert!(run(true) < 0.06, "adam lands near the optimum");
        assert!(run(false) > 2.0, "equal-budget plain descent is still far away");
    }
}

//! Dense layers and a gated recurrent cell expressed as graph ops.

use rand::Rng;

use crate::autodiff::{Graph, NodeId, ParamStore};
use crate::error::Result;
use crate::tensor::Tensor;

/// Registers a dense layer `name/w` (`[fan_in, fan_out]`) and `name/b`.
/// `gain` scales the `1/sqrt(fan_in)` default.
pub fn init_dense(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, gain: f32, rng: &mut impl Rng) -> Result<()> {
    let std = gain / (fan_in as f32).sqrt();
    store.insert_normal(&format!("{name}/w"), &[fan_in, fan_out], std, rng)?;
    store.insert(&format!("{name}/b"), Tensor::zeros(&[fan_out]))
}

pub fn init_gru(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Result<()> {
    store.insert_normal(&format!("{name}/wx"), &[input, 3 * hidden], 1.0 / (input as f32).sqrt(), rng)?;
    store.insert_normal(&format!("{name}/wh"), &[hidden, 3 * hidden], 1.0 / (hidden as f32).sqrt(), rng)?;
    store.insert(&format!("{name}/b"), Tensor::zeros(&[3 * hidden]))
}

pub fn dense(g: &mut Graph, store: &ParamStore, name: &str, x: NodeId) -> Result<NodeId> {
    let w = g.param_from(store, &format!("{name}/w"))?;
    let b = g.param_from(store, &format!("{name}/b"))?;
    g.affine(x, w, b)
}

/// `h' = (1 - u) * n + u * h` with update gate `u`, reset gate `r` and
/// candidate `n = tanh(x Wn + r * (h Un) + b)`.
pub fn gru_step(g: &mut Graph, store: &ParamStore, name: &str, x: NodeId, h: NodeId) -> Result<NodeId> {
    let wx = g.param_from(store, &format!("{name}/wx"))?;
    let wh = g.param_from(store, &format!("{name}/wh"))?;
    let b = g.param_from(store, &format!("{name}/b"))?;
    let hd = g.value(h).cols();
    let xw = g.affine(x, wx, b)?;
    let hw = g.matmul(h, wh)?;
    let xu = g.slice(xw, 0, hd)?;
    let xr = g.slice(xw, hd, 2 * hd)?;
    let xn = g.slice(xw, 2 * hd, 3 * hd)?;
    let hu = g.slice(hw, 0, hd)?;
    let hr = g.slice(hw, hd, 2 * hd)?;
    let hn = g.slice(hw, 2 * hd, 3 * hd)?;
    let u_pre = g.add(xu, hu)?;
    let u = g.sigmoid(u_pre)?;
    let r_pre = g.add(xr, hr)?;
    let r = g.sigmoid(r_pre)?;
    let rh = g.mul(r, hn)?;
    let n_pre = g.add(xn, rh)?;
    let n = g.tanh(n_pre)?;
    let diff = g.sub(h, n)?;
    let ud = g.mul(u, diff)?;
    g.add(n, ud)
}

//! Numerical self-checks shared by unit and acceptance tests.

use super::tensor::Tape;
use super::transformer::{Model, ModelError, SeqItem};

/// Per-tensor agreement between reverse-mode and central-difference
/// gradients of the training loss.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    /// `‖g_ad − g_fd‖ / (‖g_ad‖ + ‖g_fd‖)`, or 0 when both vanish.
    pub rel_error: f64,
}

pub fn gradient_check(model: &Model, items: &[SeqItem], h: f64) -> Result<Vec<GradCheck>, ModelError> {
    let mut tape = Tape::new();
    let loss = model.loss(&mut tape, items, None)?;
    let analytic = tape.backward(loss, model.params.len());
    let eval = |m: &Model| -> Result<f64, ModelError> {
        let mut t = Tape::new();
        let l = m.loss(&mut t, items, None)?;
        Ok(t.value(l)[0])
    };
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(model.params.len());
    for (i, g) in analytic.iter().enumerate() {
        let mut diff = 0.0;
        let mut na = 0.0;
        let mut nf = 0.0;
        for j in 0..g.len() {
            let orig = probe.params[i].value[j];
            probe.params[i].value[j] = orig + h;
            let up = eval(&probe)?;
            probe.params[i].value[j] = orig - h;
            let down = eval(&probe)?;
            probe.params[i].value[j] = orig;
            let fd = (up - down) / (2.0 * h);
            diff += (g[j] - fd).powi(2);
            na += g[j] * g[j];
            nf += fd * fd;
        }
        let (diff, na, nf) = (diff.sqrt(), na.sqrt(), nf.sqrt());
        let rel_error = if na + nf < 1e-12 { 0.0 } else { diff / (na + nf) };
        out.push(GradCheck { name: model.params[i].name.clone(), rel_error });
    }
    Ok(out)
}

/// Largest change in the logits of steps `..=t` when every input of steps
/// after `t` is replaced by `perturbed`'s.
pub fn causal_leak(model: &Model, item: &SeqItem, perturbed: &SeqItem, t: usize) -> Result<f64, ModelError> {
    let mut mixed = item.clone();
    for s in t + 1..item.steps.len() {
        mixed.steps[s] = perturbed.steps[s].clone();
    }
    let a = model.logits(std::slice::from_ref(item))?;
    let b = model.logits(std::slice::from_ref(&mixed))?;
    let n = model.config.action_count * (t + 1);
    Ok(a[..n].iter().zip(&b[..n]).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

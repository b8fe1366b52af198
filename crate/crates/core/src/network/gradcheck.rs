use super::model::{Mode, Network};
use super::params::NetParams;
use super::{NetInput, Result};

/// Relative errors are `|a - b| / max(|a|, |b|, floor)`. Below the floor the
/// comparison is effectively absolute, well above the rounding noise of
/// central differences at `eps = 1e-5`.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradientCheck {
    pub parameters: usize,
    /// Worst error against plain central differences.
    pub worst_plain: f64,
    /// Parameters whose `±eps` probes changed a rectifier or absolute-value
    /// branch and whose plain difference disagreed.
    pub kink_crossings: usize,
    /// Worst error after replacing invalid plain differences by differences
    /// on the smooth piece of the unperturbed point.
    pub worst: f64,
    pub worst_name: String,
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_FLOOR)
}

/// Compares tape gradients of the train-mode loss with central differences
/// of step `eps` for every trainable parameter. A plain difference that
/// disagrees by more than `tol` is accepted as an oracle only if neither
/// probe crossed a kink; otherwise the difference is recomputed on the
/// smooth piece selected at the unperturbed parameters.
pub fn check_gradients(net: &Network, params: &NetParams<f64>, input: &NetInput<f64>, labels: &[usize], eps: f64, tol: f64) -> Result<GradientCheck> {
    let analytic = net.backprop(params, input, labels)?.grads.flat(params);
    let base = net.kink_pattern(params, input, Mode::Train)?;
    let mut q = params.clone();
    let mut out = GradientCheck { parameters: analytic.len(), worst_plain: 0.0, kink_crossings: 0, worst: 0.0, worst_name: String::new() };
    for (k, &a) in analytic.iter().enumerate() {
        let x = q.get_flat(k);
        q.set_flat(k, x + eps);
        let lp = net.loss(&q, input, labels, Mode::Train)?;
        q.set_flat(k, x - eps);
        let lm = net.loss(&q, input, labels, Mode::Train)?;
        let plain = rel(a, (lp - lm) / (2.0 * eps));
        out.worst_plain = out.worst_plain.max(plain);
        let mut err = plain;
        if plain > tol {
            let crossed_m = net.kink_pattern(&q, input, Mode::Train)?.differences(&base) > 0;
            let pm = net.loss_on_piece(&q, input, labels, Mode::Train, &base)?;
            q.set_flat(k, x + eps);
            let crossed_p = net.kink_pattern(&q, input, Mode::Train)?.differences(&base) > 0;
            let pp = net.loss_on_piece(&q, input, labels, Mode::Train, &base)?;
            if crossed_p || crossed_m {
                out.kink_crossings += 1;
                err = rel(a, (pp - pm) / (2.0 * eps));
            }
        }
        q.set_flat(k, x);
        if err > out.worst || out.worst_name.is_empty() {
            out.worst = err;
            out.worst_name = params.flat_name(k).to_string();
        }
    }
    Ok(out)
}

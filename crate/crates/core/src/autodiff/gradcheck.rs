use super::params::ParameterStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Worst-case disagreement between tape gradients and central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
}

/// Denominator floor of the relative error. Central differences at ε = 1e-5
/// carry roughly `1e-16 · |f| / ε ≈ 1e-10` of rounding noise, so entries
/// smaller than this cannot be resolved to 1e-4 relative accuracy.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Compares the tape gradient of `loss_fn` against `(f(θ+ε) − f(θ−ε)) / 2ε`
/// for every parameter entry. The relative error of an entry is
/// `|a − b| / max(|a|, |b|, RELATIVE_FLOOR)`.
///
/// `loss_fn` must record a scalar loss on the tape it is given; the store is
/// restored to its original values before returning.
pub fn grad_check<F>(store: &mut ParameterStore, eps: f64, mut loss_fn: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<'_>) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::Config(format!("grad_check eps must be in (0, 1e-3], got {eps}")));
    }
    let analytic = {
        let mut tape = Tape::new(store);
        let loss = loss_fn(&mut tape)?;
        tape.backward(loss)?
    };

    let mut eval = |store: &ParameterStore| -> Result<f64> {
        let mut tape = Tape::new(store);
        let loss = loss_fn(&mut tape)?;
        let value = tape.value(loss).item().ok_or(Error::Shape {
            op: "grad_check",
            detail: "loss is not scalar".into(),
        })?;
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "grad_check" });
        }
        Ok(value)
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.value(id).len();
        for k in 0..n {
            let original = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = original + eps;
            let plus = eval(store);
            store.value_mut(id).data_mut()[k] = original - eps;
            let minus = eval(store);
            store.value_mut(id).data_mut()[k] = original;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let tape_grad = analytic.get(id).map_or(0.0, |g| g.data()[k]);
            let abs = (numeric - tape_grad).abs();
            let rel = abs / numeric.abs().max(tape_grad.abs()).max(RELATIVE_FLOOR);
            report.max_absolute_error = report.max_absolute_error.max(abs);
            report.entries_checked += 1;
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = Some((store.name(id).to_string(), k));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn linear_model_is_exact() {
        let mut store = ParameterStore::new();
        let w = store
            .insert("w", Tensor::new(3, 2, vec![0.5, -1.0, 2.0, 0.25, -0.75, 1.5]).unwrap())
            .unwrap();
        let report = grad_check(&mut store, 1e-5, |tape| {
            let wv = tape.param(w);
            let x = tape.constant(Tensor::vector(vec![0.3, -0.2]));
            let y = tape.matvec(wv, x)?;
            tape.sum(y)
        })
        .unwrap();
        assert!(report.max_relative_error < 1e-9, "{report:?}");
        assert_eq!(report.entries_checked, 6);
    }

    #[test]
    fn eps_is_validated() {
        let mut store = ParameterStore::new();
        assert!(grad_check(&mut store, 0.0, |t| Ok(t.constant(Tensor::scalar(0.0)))).is_err());
        assert!(grad_check(&mut store, 1e-2, |t| Ok(t.constant(Tensor::scalar(0.0)))).is_err());
    }

    /// Each primitive in isolation agrees with central differences.
    #[test]
    fn primitives_match_finite_differences() {
        let mut store = ParameterStore::new();
        let a = store.insert("a", Tensor::vector(vec![0.3, -0.7, 1.1, -0.2])).unwrap();
        let b = store.insert("b", Tensor::vector(vec![-0.5, 0.9, 0.4, 1.3])).unwrap();
        let w = store
            .insert("w", Tensor::new(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap())
            .unwrap();
        let table = store
            .insert("t", Tensor::new(5, 4, (0..20).map(|i| (i as f64 * 0.53).cos()).collect()).unwrap())
            .unwrap();
        // Fixed weights turn vector outputs into a scalar with generic slopes.
        let probe = |tape: &mut Tape<'_>, v: Var| -> Result<Var> {
            let n = tape.value(v).len();
            let c = tape.constant(Tensor::vector((0..n).map(|i| 0.3 + 0.2 * i as f64).collect()));
            let h = tape.hadamard(v, c)?;
            tape.sum(h)
        };
        type Case = Box<dyn Fn(&mut Tape<'_>) -> Result<Var>>;
        let cases: Vec<(&str, Case)> = vec![
            ("matvec", Box::new(move |t| { let (w, a) = (t.param(w), t.param(a)); t.matvec(w, a) })),
            ("add", Box::new(move |t| { let (a, b) = (t.param(a), t.param(b)); t.add(a, b) })),
            ("hadamard", Box::new(move |t| { let (a, b) = (t.param(a), t.param(b)); t.hadamard(a, b) })),
            ("sigmoid", Box::new(move |t| { let a = t.param(a); t.sigmoid(a) })),
            ("tanh", Box::new(move |t| { let a = t.param(a); t.tanh(a) })),
            ("relu", Box::new(move |t| { let a = t.param(a); t.relu(a) })),
            ("sum_list", Box::new(move |t| { let (a, b) = (t.param(a), t.param(b)); t.sum_list(&[a, b, a]) })),
            ("scale", Box::new(move |t| { let a = t.param(a); t.scale(a, -1.7) })),
            ("embed", Box::new(move |t| { let l = t.param(table); t.embed(l, 3) })),
            ("softmax_xent", Box::new(move |t| { let a = t.param(a); t.softmax_cross_entropy(a, 2) })),
        ];
        for (name, f) in cases {
            let report = grad_check(&mut store, 1e-5, |tape| {
                let out = f(tape)?;
                probe(tape, out)
            })
            .unwrap();
            assert!(report.max_relative_error < 1e-6, "{name}: {report:?}");
        }
    }
}

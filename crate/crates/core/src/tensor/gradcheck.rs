use super::{Tape, Tensor, TensorError, Var};

/// Central-difference step.
pub const DEFAULT_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_rel_error)
            .fold(0.0, f64::max)
    }
}

fn evaluate<F, E>(params: &[Tensor], f: &F, requires_grad: bool) -> Result<(Tape, Var, Vec<Var>), E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|p| tape.leaf(p.clone(), requires_grad))
        .collect();
    let loss = f(&mut tape, &vars)?;
    Ok((tape, loss, vars))
}

fn scalar_loss<F, E>(params: &[Tensor], f: &F) -> Result<f64, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    let (tape, loss, _) = evaluate(params, f, false)?;
    let value = tape.value(loss);
    value
        .item()
        .ok_or_else(|| TensorError::NotScalar(value.shape().to_vec()).into())
}

/// Loss value and backprop gradients for each parameter.
pub fn analytic_gradients<F, E>(params: &[Tensor], f: &F) -> Result<(f64, Vec<Tensor>), E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    let (tape, loss, vars) = evaluate(params, f, true)?;
    let mut grads = tape.backward(loss)?;
    let value = tape.value(loss).item().unwrap_or(f64::NAN);
    let out = vars
        .iter()
        .zip(params)
        .map(|(v, p)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    Ok((value, out))
}

/// Central differences `(f(θ+h) - f(θ-h)) / 2h` for every parameter scalar.
pub fn numeric_gradients<F, E>(params: &[Tensor], f: &F, step: f64) -> Result<Vec<Tensor>, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut grad = Tensor::zeros(params[p].shape());
        for i in 0..params[p].numel() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + step;
            let plus = scalar_loss(&work, f)?;
            work[p].data_mut()[i] = orig - step;
            let minus = scalar_loss(&work, f)?;
            work[p].data_mut()[i] = orig;
            grad.data_mut()[i] = (plus - minus) / (2.0 * step);
        }
        out.push(grad);
    }
    Ok(out)
}

/// Per-tensor maximum of `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn compare_gradients(
    names: &[String],
    analytic: &[Tensor],
    numeric: &[Tensor],
    tolerance: f64,
) -> GradReport {
    let tensors = names
        .iter()
        .zip(analytic.iter().zip(numeric))
        .map(|(name, (a, n))| {
            let max_rel_error = a
                .data()
                .iter()
                .zip(n.data())
                .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
                .fold(0.0, f64::max);
            TensorCheck {
                name: name.clone(),
                max_rel_error,
                passed: max_rel_error <= tolerance,
            }
        })
        .collect();
    GradReport { tolerance, tensors }
}

/// Checks backprop gradients of a scalar closure against central finite
/// differences. The closure receives one tape variable per parameter, in
/// order, and must return the loss.
pub fn gradcheck<F, E>(
    names: &[String],
    params: &[Tensor],
    f: F,
    tolerance: f64,
) -> Result<GradReport, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    assert_eq!(names.len(), params.len(), "one name per parameter");
    if params.is_empty() {
        return Ok(GradReport {
            tolerance,
            tensors: Vec::new(),
        });
    }
    let first = scalar_loss(params, &f)?;
    let second = scalar_loss(params, &f)?;
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::NonDeterministic { first, second }.into());
    }
    let (_, analytic) = analytic_gradients(params, &f)?;
    let numeric = numeric_gradients(params, &f, DEFAULT_STEP)?;
    Ok(compare_gradients(names, &analytic, &numeric, tolerance))
}

use super::{Bindings, NumericError, ParamStore, Tape, Var};
use super::tape::evaluate_with_gradients;

/// Outcome of comparing analytic gradients against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_relative_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub coordinates: usize,
}

fn forward_value<E, F>(params: &ParamStore, program: &F) -> Result<f64, E>
where
    E: From<NumericError>,
    F: Fn(&mut Tape, &Bindings) -> Result<Var, E>,
{
    let mut tape = Tape::new();
    let bindings = tape.register(params);
    let out = program(&mut tape, &bindings)?;
    Ok(tape
        .value(out)
        .item()
        .ok_or_else(|| NumericError::Contract("program output must be scalar".into()))?)
}

/// Perturbs every coordinate of every parameter by `±step` and compares
/// `(f(θ+e) − f(θ−e)) / 2·step` with the reverse-mode gradient. The
/// relative error of a coordinate is `|a − n| / max(1, |a|, |n|)`.
pub fn finite_difference_gradcheck<E, F>(
    params: &ParamStore,
    program: F,
    step: f64,
) -> Result<GradcheckReport, E>
where
    E: From<NumericError>,
    F: Fn(&mut Tape, &Bindings) -> Result<Var, E>,
{
    if !(step > 0.0) {
        return Err(NumericError::Contract(format!("gradcheck step must be positive, got {step}")).into());
    }
    let (_, analytic) = evaluate_with_gradients(params, &program)?;
    let mut report = GradcheckReport {
        max_relative_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        coordinates: 0,
    };
    let mut probe = params.clone();
    for (name, value) in params.iter() {
        let grad = analytic.get(name).expect("every registered parameter has a gradient");
        for i in 0..value.len() {
            let original = value.data()[i];
            probe.get_mut(name).unwrap().data_mut()[i] = original + step;
            let plus = forward_value(&probe, &program)?;
            probe.get_mut(name).unwrap().data_mut()[i] = original - step;
            let minus = forward_value(&probe, &program)?;
            probe.get_mut(name).unwrap().data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.data()[i];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.coordinates += 1;
            if err > report.max_relative_error || report.worst_param.is_empty() {
                report.max_relative_error = err;
                report.worst_param = name.to_string();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

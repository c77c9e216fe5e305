use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Probe {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub probes: Vec<Probe>,
}

/// `|a − b| / max(1e-8, |a| + |b|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn eval_loss<F>(params: &ParamStore, loss_fn: &F) -> Result<f64>
where
    F: for<'a> Fn(&mut Graph<'a>) -> Result<Var>,
{
    let mut g = Graph::new(params);
    let loss = loss_fn(&mut g)?;
    let v = g.value(loss).data()[0];
    if !v.is_finite() {
        return Err(Error::NonFinite("grad_check loss".into()));
    }
    Ok(v)
}

/// Compares reverse-mode gradients against central differences at `n_probe`
/// scalar parameters drawn uniformly (seeded) from the whole store.
///
/// `params` is perturbed in place and restored exactly before returning.
pub fn grad_check<F>(
    params: &mut ParamStore,
    h: f64,
    n_probe: usize,
    seed: u64,
    loss_fn: F,
) -> Result<GradCheckReport>
where
    F: for<'a> Fn(&mut Graph<'a>) -> Result<Var>,
{
    if !(1e-6..=1e-4).contains(&h) {
        return Err(Error::InvalidArgument(format!("finite-difference step {h} outside [1e-6, 1e-4]")));
    }
    let total = params.scalar_count();
    if total == 0 {
        return Err(Error::InvalidArgument("grad_check on an empty parameter store".into()));
    }

    let analytic = {
        let mut g = Graph::new(params);
        let loss = loss_fn(&mut g)?;
        g.backward(loss)?
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probes = Vec::with_capacity(n_probe);
    for _ in 0..n_probe {
        let mut flat = rng.gen_range(0..total);
        let mut id = ParamId(0);
        for pid in params.ids() {
            let n = params.value(pid).len();
            if flat < n {
                id = pid;
                break;
            }
            flat -= n;
        }
        let ga = analytic.get(id).map_or(0.0, |g| g[flat]);

        let orig = params.value(id).data()[flat];
        params.value_mut(id).data_mut()[flat] = orig + h;
        let plus = eval_loss(params, &loss_fn);
        params.value_mut(id).data_mut()[flat] = orig - h;
        let minus = eval_loss(params, &loss_fn);
        params.value_mut(id).data_mut()[flat] = orig;
        let numeric = (plus? - minus?) / (2.0 * h);

        probes.push(Probe {
            param: params.name(id).to_string(),
            index: flat,
            analytic: ga,
            numeric,
            rel_error: relative_error(ga, numeric),
        });
    }
    let max_rel_error = probes.iter().map(|p| p.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        probes,
    })
}

use crate::numerics::ParamStore;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam with bias correction. Moments are stored in parameter-id order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.ids().map(|id| vec![0.0; params.value(id).len()]).collect();
        Self {
            lr,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies the accumulated gradients. With `round_f32`, parameters and
    /// moments are rounded to single precision afterwards.
    pub fn step(&mut self, params: &mut ParamStore, round_f32: bool) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powf(self.step as f64);
        let c2 = 1.0 - BETA2.powf(self.step as f64);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let grad = params.grad(id).data().to_vec();
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            let value = params.value_mut(id).data_mut();
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                value[i] -= self.lr * mh / (vh.sqrt() + EPSILON);
                if round_f32 {
                    value[i] = value[i] as f32 as f64;
                    m[i] = m[i] as f32 as f64;
                    v[i] = v[i] as f32 as f64;
                }
            }
        }
    }
}

// SPDX-License-Identifier: Apache-2.0

use crate::nets::ParamStore;

/// Adam with bias correction. Moments are kept in `f64`.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore<f32>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.arrays().map(|(_, a)| vec![0.0; a.len()]).collect();
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamStore<f32>, grads: &ParamStore<f32>) {
        assert_eq!(params.specs(), grads.specs(), "parameter layouts differ");
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for id in 0..params.len() {
            let g = grads.get(id);
            let (m, v) = (&mut self.m[id], &mut self.v[id]);
            for (i, p) in params.get_mut(id).iter_mut().enumerate() {
                let gi = g[i] as f64;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let update = self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                *p = (*p as f64 - update) as f32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::params::{Init, LayoutBuilder};

    fn store(vals: &[f32]) -> ParamStore<f32> {
        let mut b = LayoutBuilder::default();
        b.add("x".into(), vec![vals.len()], Init::Zeros);
        ParamStore::from_arrays(&b.finish(), vec![("x".into(), vals.to_vec())]).unwrap()
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        // bias correction makes the first update exactly lr * g / (|g| + eps)
        let mut p = store(&[1.0, -2.0, 0.5]);
        let g = store(&[3.0, -0.25, 0.0]);
        let mut opt = Adam::new(&p, 0.1, 0.9, 0.999, 1e-8);
        opt.step(&mut p, &g);
        let x = p.get(0);
        assert!((x[0] as f64 - 0.9).abs() < 1e-6);
        assert!((x[1] as f64 - -1.9).abs() < 1e-6);
        assert_eq!(x[2], 0.5);
    }

    #[test]
    fn matches_reference_recurrence() {
        let mut p = store(&[0.3]);
        let mut opt = Adam::new(&p, 0.01, 0.9, 0.999, 1e-8);
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 0.3f64);
        for t in 1..=20 {
            let gv = 2.0 * x - 1.0;
            let g = store(&[gv as f32]);
            opt.step(&mut p, &g);
            let gv = gv as f32 as f64;
            m = 0.9 * m + 0.1 * gv;
            v = 0.999 * v + 0.001 * gv * gv;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x = (x - 0.01 * mh / (vh.sqrt() + 1e-8)) as f32 as f64;
            assert_eq!(p.get(0)[0] as f64, x);
        }
        assert_eq!(opt.steps(), 20);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = store(&[4.0, -3.0]);
        let mut opt = Adam::new(&p, 0.05, 0.9, 0.999, 1e-8);
        for _ in 0..2000 {
            let g: Vec<f32> = p.get(0).iter().map(|x| 2.0 * (x - 1.0)).collect();
            opt.step(&mut p, &store(&g));
        }
        assert!(p.get(0).iter().all(|x| (x - 1.0).abs() < 1e-2));
    }
}

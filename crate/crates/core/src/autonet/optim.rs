use super::{AutonetError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `w` in place. `t` is the 1-based step.
pub fn adam_step(
    w: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    cfg: AdamConfig,
) -> Result<(), AutonetError> {
    if !(lr > 0.0) {
        return Err(AutonetError::Parameter(format!("learning rate must be > 0, got {lr}")));
    }
    if t == 0 {
        return Err(AutonetError::Parameter("adam step counter starts at 1".into()));
    }
    if g.len() != w.len() || m.len() != w.len() || v.len() != w.len() {
        return Err(AutonetError::Shape("adam buffers differ in length".into()));
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..w.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let mh = m[i] / bc1;
        let vh = v[i] / bc2;
        w[i] -= lr * mh / (vh.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Adam over a fixed list of parameter tensors, with first/second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &[&Tensor], cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, lr: f64) -> Result<(), AutonetError> {
        if params.len() != self.m.len() {
            return Err(AutonetError::Shape("optimizer built for a different model".into()));
        }
        self.t += 1;
        for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
            let (w, g) = p.data_and_grad_mut();
            let g = g.ok_or_else(|| AutonetError::State("parameter without gradient".into()))?;
            adam_step(w, g, m, v, self.t, lr, self.cfg)?;
        }
        Ok(())
    }
}

/// `lr(epoch) = base · gamma^⌊epoch / every⌋` with 0-based epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDecay {
    pub base_lr: f64,
    pub gamma: f64,
    pub every: usize,
}

impl StepDecay {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.every == 0 {
            return self.base_lr;
        }
        self.base_lr * self.gamma.powi((epoch / self.every) as i32)
    }
}

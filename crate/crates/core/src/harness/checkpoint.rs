use std::path::Path;

use super::{ExperimentConfig, HarnessError, Snapshot};
use crate::datagen::{find, find_f64, find_i64, read_container, write_container, NamedTensor};
use crate::matrix::Mat;
use crate::rls::RmdnState;

/// A trained run: its config, model seed, and the snapshot after each stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub snapshots: Vec<Snapshot>,
}

impl Checkpoint {
    pub fn to_records(&self) -> Vec<NamedTensor> {
        let text = self.config.to_text();
        let mut recs = vec![
            NamedTensor::i64(
                "meta.config",
                &[text.len()],
                text.bytes().map(i64::from).collect(),
            ),
            NamedTensor::scalar_i64("meta.seed", self.seed as i64),
            NamedTensor::scalar_i64("meta.stages", self.snapshots.len() as i64),
        ];
        for (s, snap) in self.snapshots.iter().enumerate() {
            recs.push(NamedTensor::scalar_i64(
                format!("s{s}.param_count"),
                snap.params.len() as i64,
            ));
            for (j, p) in snap.params.iter().enumerate() {
                recs.push(NamedTensor::f64(format!("s{s}.param{j}"), &[p.len()], p.clone()));
            }
            recs.push(NamedTensor::scalar_i64(
                format!("s{s}.rmdn_count"),
                snap.rmdn.len() as i64,
            ));
            for (l, st) in snap.rmdn.iter().enumerate() {
                let (p, h) = st.beta().shape();
                recs.push(NamedTensor::f64(
                    format!("s{s}.rmdn{l}.beta"),
                    &[p, h],
                    st.beta().data().to_vec(),
                ));
                recs.push(NamedTensor::f64(
                    format!("s{s}.rmdn{l}.p_inv"),
                    &[p, p],
                    st.p_inv().data().to_vec(),
                ));
                recs.push(NamedTensor::scalar_i64(
                    format!("s{s}.rmdn{l}.n_seen"),
                    st.n_seen() as i64,
                ));
            }
        }
        recs
    }

    pub fn from_records(recs: &[NamedTensor]) -> Result<Self, HarnessError> {
        let bad = |m: String| HarnessError::Checkpoint(m);
        let bytes: Vec<u8> = find_i64(recs, "meta.config")?
            .iter()
            .map(|&b| u8::try_from(b).map_err(|_| bad("config byte out of range".into())))
            .collect::<Result<_, _>>()?;
        let text = String::from_utf8(bytes).map_err(|_| bad("config is not UTF-8".into()))?;
        let config = ExperimentConfig::parse(&text)?;
        let seed = find_i64(recs, "meta.seed")?[0] as u64;
        let stages = find_i64(recs, "meta.stages")?[0];
        let count = |name: String| -> Result<usize, HarnessError> {
            let v = find_i64(recs, &name)?[0];
            usize::try_from(v).map_err(|_| bad(format!("negative count in {name}")))
        };
        let mut snapshots = Vec::new();
        for s in 0..usize::try_from(stages).map_err(|_| bad("negative stage count".into()))? {
            let params = (0..count(format!("s{s}.param_count"))?)
                .map(|j| Ok(find_f64(recs, &format!("s{s}.param{j}"))?.to_vec()))
                .collect::<Result<Vec<_>, HarnessError>>()?;
            let mut rmdn = Vec::new();
            for l in 0..count(format!("s{s}.rmdn_count"))? {
                let name = format!("s{s}.rmdn{l}.beta");
                let dims = find(recs, &name)?.dims_usize();
                if dims.len() != 2 {
                    return Err(bad(format!("{name} must be 2-D")));
                }
                let beta = Mat::new(dims[0], dims[1], find_f64(recs, &name)?.to_vec())?;
                let p_inv = Mat::new(
                    dims[0],
                    dims[0],
                    find_f64(recs, &format!("s{s}.rmdn{l}.p_inv"))?.to_vec(),
                )?;
                let n_seen = find_i64(recs, &format!("s{s}.rmdn{l}.n_seen"))?[0] as u64;
                rmdn.push(RmdnState::from_parts(
                    beta,
                    p_inv,
                    config.model.epsilon,
                    config.model.lambda,
                    n_seen,
                )?);
            }
            snapshots.push(Snapshot { params, rmdn });
        }
        Ok(Checkpoint {
            config,
            seed,
            snapshots,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HarnessError> {
        Ok(write_container(path, &self.to_records())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        Self::from_records(&read_container(path)?)
    }
}

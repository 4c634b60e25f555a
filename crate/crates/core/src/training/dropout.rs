use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cells::SequenceNoise;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropoutKind {
    StandardInput,
    StandardHidden,
    Projection,
    VariationalInput,
    VariationalOutput,
    VariationalRecurrent,
    Zoneout,
}

impl DropoutKind {
    /// Whether one mask is shared by every timestep of a sequence.
    pub fn per_sequence(self) -> bool {
        matches!(
            self,
            DropoutKind::VariationalInput | DropoutKind::VariationalOutput | DropoutKind::VariationalRecurrent
        )
    }
}

pub fn check_keep_prob(name: &str, keep: f64) -> Result<()> {
    if !(keep > 0.0 && keep <= 1.0) {
        return Err(Error::config(name, format!("keep probability must be in (0, 1], got {keep}")));
    }
    Ok(())
}

/// Inverted-dropout mask: each entry is `1/keep` with probability `keep`,
/// otherwise 0.
pub fn sample_mask<R: Rng + ?Sized>(keep: f64, n: usize, rng: &mut R) -> Vec<f64> {
    if keep >= 1.0 {
        return vec![1.0; n];
    }
    (0..n)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}

/// Zoneout indicators: 1 (keep the previous state) with probability `1 − keep`.
pub fn sample_zoneout<R: Rng + ?Sized>(keep: f64, n: usize, rng: &mut R) -> Vec<f64> {
    if keep >= 1.0 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|_| f64::from(u8::from(rng.random::<f64>() >= keep)))
        .collect()
}

/// Applies one dropout kind to a `T × n` sequence of activations (one row per
/// timestep). For zoneout, `previous` holds the states the rows would fall
/// back to.
pub fn apply_dropout<R: Rng + ?Sized>(
    kind: DropoutKind,
    keep: f64,
    rng: &mut R,
    rows: &mut Matrix,
    previous: Option<&Matrix>,
) -> Result<()> {
    check_keep_prob("keep_prob", keep)?;
    let (t, n) = rows.shape();
    match kind {
        DropoutKind::Zoneout => {
            let prev = previous.ok_or_else(|| Error::InvalidArgument("zoneout needs the previous states".into()))?;
            if prev.shape() != rows.shape() {
                return Err(Error::dim("zoneout previous", format!("{t}x{n}"), format!("{:?}", prev.shape())));
            }
            let d = sample_zoneout(keep, t * n, rng);
            for (i, (v, old)) in rows.as_mut_slice().iter_mut().zip(prev.as_slice()).enumerate() {
                if d[i] != 0.0 {
                    *v = *old;
                }
            }
        }
        k if k.per_sequence() => {
            let m = sample_mask(keep, n, rng);
            for r in 0..t {
                rows.row_mut(r).iter_mut().zip(&m).for_each(|(v, s)| *v *= s);
            }
        }
        _ => {
            for r in 0..t {
                let m = sample_mask(keep, n, rng);
                rows.row_mut(r).iter_mut().zip(&m).for_each(|(v, s)| *v *= s);
            }
        }
    }
    Ok(())
}

/// Keep probabilities of every dropout variant; 1 disables a variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutConfig {
    pub input_dropout_pk: f64,
    pub hidden_dropout_pk: f64,
    pub projection_dropout_pk: f64,
    pub variational_input_pk: f64,
    pub variational_output_pk: f64,
    pub variational_recurrent_pk: f64,
    pub zoneout_pk: f64,
}

impl Default for DropoutConfig {
    fn default() -> Self {
        Self {
            input_dropout_pk: 1.0,
            hidden_dropout_pk: 1.0,
            projection_dropout_pk: 1.0,
            variational_input_pk: 1.0,
            variational_output_pk: 1.0,
            variational_recurrent_pk: 1.0,
            zoneout_pk: 1.0,
        }
    }
}

impl DropoutConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, keep) in [
            ("input_dropout_pk", self.input_dropout_pk),
            ("hidden_dropout_pk", self.hidden_dropout_pk),
            ("projection_dropout_pk", self.projection_dropout_pk),
            ("variational_input_pk", self.variational_input_pk),
            ("variational_output_pk", self.variational_output_pk),
            ("variational_recurrent_pk", self.variational_recurrent_pk),
            ("zoneout_pk", self.zoneout_pk),
        ] {
            check_keep_prob(name, keep)?;
        }
        Ok(())
    }

    /// Samples the masks for one training sequence of `steps` timesteps.
    ///
    /// Standard input dropout draws a fresh mask per step; the variational
    /// variants draw one per sequence. Hidden and variational output dropout
    /// both act on the final hidden state, which is the only one read out.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        steps: usize,
        input: usize,
        hidden: usize,
        projection: usize,
        rng: &mut R,
    ) -> SequenceNoise {
        let mut noise = SequenceNoise::default();
        if self.input_dropout_pk < 1.0 || self.variational_input_pk < 1.0 {
            let shared = sample_mask(self.variational_input_pk, input, rng);
            let mut m = Vec::with_capacity(steps * input);
            for _ in 0..steps {
                let fresh = sample_mask(self.input_dropout_pk, input, rng);
                m.extend(fresh.iter().zip(&shared).map(|(a, b)| a * b));
            }
            noise.input = Some(m);
        }
        if self.variational_recurrent_pk < 1.0 {
            noise.recurrent = Some(sample_mask(self.variational_recurrent_pk, hidden, rng));
        }
        if self.zoneout_pk < 1.0 {
            noise.zoneout_h = Some(sample_zoneout(self.zoneout_pk, steps * hidden, rng));
            noise.zoneout_c = Some(sample_zoneout(self.zoneout_pk, steps * hidden, rng));
        }
        if self.hidden_dropout_pk < 1.0 || self.variational_output_pk < 1.0 {
            let a = sample_mask(self.hidden_dropout_pk, hidden, rng);
            let b = sample_mask(self.variational_output_pk, hidden, rng);
            noise.readout = Some(a.iter().zip(&b).map(|(x, y)| x * y).collect());
        }
        if self.projection_dropout_pk < 1.0 {
            noise.projection = Some(sample_mask(self.projection_dropout_pk, projection, rng));
        }
        noise
    }
}

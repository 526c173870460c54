//! Persistence of a fitted single-index model as JSON.
//!
//! Numbers are written with 17 significant digits so that the text
//! round-trips the underlying doubles bit-exactly; keys are emitted in a
//! fixed order so identical models serialize to identical bytes.

use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::forward_link::PiecewiseLinearLink;

/// A fitted single-index model plus everything needed to reproduce and apply
/// it: prior choice, slicing, direction, link and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    /// Prior variant name ("sir", "ridge", ...).
    pub prior: String,
    /// Regularization parameter, absent for the plain fit.
    pub tau: Option<f64>,
    /// Cut-off dimension, absent for full-rank priors.
    pub d: Option<usize>,
    /// Number of basis functions (slices minus one).
    pub h: usize,
    /// Cut values separating adjacent slices on the response axis.
    pub slice_boundaries: Vec<f64>,
    pub b_hat: Vec<f64>,
    pub c_hat: Vec<f64>,
    pub mu_hat: Vec<f64>,
    pub lambda_hat: f64,
    pub rho_hat: f64,
    /// Training predictor mean, used to center the index at prediction time.
    pub x_bar: Vec<f64>,
    pub seed: Option<u64>,
    /// Training sample size.
    pub n: usize,
    /// Predictor dimension.
    pub p: usize,
    pub link: PiecewiseLinearLink,
}

/// Formats a double with 17 significant digits; parses back bit-exactly.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn push_array(out: &mut String, values: &[f64]) {
    out.push('[');
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format_f64(*v));
    }
    out.push(']');
}

impl ModelArtifact {
    /// Serializes to the canonical JSON text.
    pub fn to_json_string(&self) -> String {
        let mut out = String::with_capacity(1024);
        out.push('{');
        out.push_str(&format!("\"prior\":\"{}\",", self.prior));
        match self.tau {
            Some(tau) => out.push_str(&format!("\"tau\":{},", format_f64(tau))),
            None => out.push_str("\"tau\":null,"),
        }
        match self.d {
            Some(d) => out.push_str(&format!("\"d\":{d},")),
            None => out.push_str("\"d\":null,"),
        }
        out.push_str(&format!("\"h\":{},", self.h));
        out.push_str("\"slice_boundaries\":");
        push_array(&mut out, &self.slice_boundaries);
        out.push_str(",\"b_hat\":");
        push_array(&mut out, &self.b_hat);
        out.push_str(",\"c_hat\":");
        push_array(&mut out, &self.c_hat);
        out.push_str(",\"mu_hat\":");
        push_array(&mut out, &self.mu_hat);
        out.push_str(&format!(",\"lambda_hat\":{}", format_f64(self.lambda_hat)));
        out.push_str(&format!(",\"rho_hat\":{}", format_f64(self.rho_hat)));
        out.push_str(",\"x_bar\":");
        push_array(&mut out, &self.x_bar);
        match self.seed {
            Some(seed) => out.push_str(&format!(",\"seed\":{seed}")),
            None => out.push_str(",\"seed\":null"),
        }
        out.push_str(&format!(",\"n\":{},\"p\":{}", self.n, self.p));
        out.push_str(",\"link\":{\"knots\":");
        push_array(&mut out, self.link.knots());
        out.push_str(",\"values\":");
        push_array(&mut out, self.link.values());
        out.push_str("}}");
        out
    }

    /// Parses the JSON text produced by [`ModelArtifact::to_json_string`].
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::InvalidParameter("model json is not an object".into()))?;

        let get = |key: &str| -> Result<&Value> {
            obj.get(key)
                .ok_or_else(|| Error::InvalidParameter(format!("model json misses key '{key}'")))
        };
        let as_f64 = |key: &str| -> Result<f64> {
            get(key)?
                .as_f64()
                .ok_or_else(|| Error::InvalidParameter(format!("key '{key}' is not a number")))
        };
        let as_usize = |key: &str| -> Result<usize> {
            get(key)?
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| Error::InvalidParameter(format!("key '{key}' is not an integer")))
        };
        let as_vec = |v: &Value, key: &str| -> Result<Vec<f64>> {
            v.as_array()
                .ok_or_else(|| Error::InvalidParameter(format!("key '{key}' is not an array")))?
                .iter()
                .map(|x| {
                    x.as_f64().ok_or_else(|| {
                        Error::InvalidParameter(format!("key '{key}' holds a non-number"))
                    })
                })
                .collect()
        };

        let prior = get("prior")?
            .as_str()
            .ok_or_else(|| Error::InvalidParameter("key 'prior' is not a string".into()))?
            .to_string();
        let tau = match get("tau")? {
            Value::Null => None,
            v => Some(v.as_f64().ok_or_else(|| {
                Error::InvalidParameter("key 'tau' is neither null nor a number".into())
            })?),
        };
        let d = match get("d")? {
            Value::Null => None,
            v => Some(v.as_u64().ok_or_else(|| {
                Error::InvalidParameter("key 'd' is neither null nor an integer".into())
            })? as usize),
        };
        let seed = match get("seed")? {
            Value::Null => None,
            v => Some(v.as_u64().ok_or_else(|| {
                Error::InvalidParameter("key 'seed' is neither null nor an integer".into())
            })?),
        };
        let link_obj = get("link")?;
        let knots = as_vec(
            link_obj
                .get("knots")
                .ok_or_else(|| Error::InvalidParameter("link misses 'knots'".into()))?,
            "link.knots",
        )?;
        let values = as_vec(
            link_obj
                .get("values")
                .ok_or_else(|| Error::InvalidParameter("link misses 'values'".into()))?,
            "link.values",
        )?;

        Ok(ModelArtifact {
            prior,
            tau,
            d,
            h: as_usize("h")?,
            slice_boundaries: as_vec(get("slice_boundaries")?, "slice_boundaries")?,
            b_hat: as_vec(get("b_hat")?, "b_hat")?,
            c_hat: as_vec(get("c_hat")?, "c_hat")?,
            mu_hat: as_vec(get("mu_hat")?, "mu_hat")?,
            lambda_hat: as_f64("lambda_hat")?,
            rho_hat: as_f64("rho_hat")?,
            x_bar: as_vec(get("x_bar")?, "x_bar")?,
            seed,
            n: as_usize("n")?,
            p: as_usize("p")?,
            link: PiecewiseLinearLink::new(knots, values)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_artifact() -> ModelArtifact {
        ModelArtifact {
            prior: "ridge".into(),
            tau: Some(0.1 + 0.2),
            d: None,
            h: 3,
            slice_boundaries: vec![-0.5, 0.0, 0.7],
            b_hat: vec![0.6, -0.8],
            c_hat: vec![1.0 / 3.0, 2.0 / 7.0, -5.0 / 11.0],
            mu_hat: vec![0.25, -0.125],
            lambda_hat: 0.87654321,
            rho_hat: 0.87654321 / (1.0 - 0.87654321),
            x_bar: vec![1e-17, 3.0],
            seed: Some(42),
            n: 100,
            p: 2,
            link: PiecewiseLinearLink::new(vec![-1.0, 0.0, 1.0], vec![0.1, 0.2, 0.3]).unwrap(),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let artifact = sample_artifact();
        let text = artifact.to_json_string();
        let back = ModelArtifact::from_json_str(&text).unwrap();
        assert_eq!(artifact, back);
        // re-serializing yields identical bytes
        assert_eq!(text, back.to_json_string());
    }

    #[test]
    fn seventeen_digit_floats_round_trip() {
        for x in [
            0.1 + 0.2,
            1.0 / 3.0,
            f64::MIN_POSITIVE,
            1.7976931348623157e308,
            -0.0,
            12345.6789,
        ] {
            let s = format_f64(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
        }
    }

    #[test]
    fn null_fields_round_trip() {
        let mut artifact = sample_artifact();
        artifact.prior = "sir".into();
        artifact.tau = None;
        artifact.seed = None;
        let back = ModelArtifact::from_json_str(&artifact.to_json_string()).unwrap();
        assert_eq!(artifact, back);
    }

    #[test]
    fn missing_key_is_an_error() {
        assert!(ModelArtifact::from_json_str("{}").is_err());
        assert!(ModelArtifact::from_json_str("not json").is_err());
    }
}

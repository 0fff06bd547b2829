//! CSV formatting, provenance hashes, and the per-directory scenario manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};

use super::ExperimentSpec;

/// Version tag written in the first column of every CSV row.
pub const CSV_SCHEMA: &str = "aoi-sched/1";

const MANIFEST: &str = "manifest.json";

/// `%.12g`-style formatting: 12 significant digits, trailing zeros removed,
/// scientific notation outside `[1e-5, 1e12)`.
pub fn fmt_g(x: f64) -> String {
    const DIGITS: usize = 12;
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{:.*e}", DIGITS - 1, x);
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if exp < -5 || exp >= DIGITS as i32 {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (DIGITS as i32 - 1 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_g).unwrap_or_default()
}

/// SHA-256 of the canonical JSON form of the resolved spec.
pub fn config_hash(spec: &ExperimentSpec) -> String {
    let json = serde_json::to_string(spec).expect("spec serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

/// Records `scenario -> config hash` in the output directory and refuses a
/// second, different configuration under the same scenario id.
pub fn register_scenario(out: &Path, scenario: &str, hash: &str) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join(MANIFEST);
    let mut manifest: BTreeMap<String, String> = if path.exists() {
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        BTreeMap::new()
    };
    match manifest.get(scenario) {
        Some(existing) if existing != hash => bail!(
            "scenario id {scenario:?} already used in {} by a different configuration ({existing}); \
             choose another id or output directory",
            out.display()
        ),
        Some(_) => return Ok(()),
        None => {}
    }
    manifest.insert(scenario.to_string(), hash.to_string());
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

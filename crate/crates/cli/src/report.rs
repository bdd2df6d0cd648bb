//! Output helpers: human-readable numbers, artifacts and sidecars.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// `%g`-style rendering with six significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let s = format!("{x:.5e}");
        let (mant, e) = s.split_once('e').expect("exponent form");
        let mant = if mant.contains('.') { mant.trim_end_matches('0').trim_end_matches('.') } else { mant };
        format!("{mant}e{e}")
    }
}

/// Output directory for one run's artifacts.
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> ntpcap::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(OutDir { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, contents: &str) -> ntpcap::Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, contents)?;
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> ntpcap::Result<PathBuf> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, &s)
    }

    /// `<subcommand>.run.json` with the resolved configuration.
    pub fn sidecar<T: Serialize>(&self, subcommand: &str, seed: u64, config: &T) -> ntpcap::Result<PathBuf> {
        let v = json!({
            "subcommand": subcommand,
            "version": VERSION,
            "seed": seed,
            "config": config,
        });
        self.write_json(&format!("{subcommand}.run.json"), &v)
    }
}

/// One JSON object on stderr describing a failed operation.
pub fn error_line(err: &ntpcap::Error) -> String {
    json!({ "error": err.kind(), "message": err.to_string() }).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(3.0 * 3f64.ln()), "3.29584");
        assert_eq!(sig6(25.0), "25");
        assert_eq!(sig6(0.5), "0.5");
        assert_eq!(sig6(123456.7), "123457");
        assert_eq!(sig6(1234567.0), "1.23457e6");
        assert_eq!(sig6(1.5e-7), "1.5e-7");
        assert_eq!(sig6(-0.000123456789), "-0.000123457");
        assert_eq!(sig6(0.0), "0");
    }
}

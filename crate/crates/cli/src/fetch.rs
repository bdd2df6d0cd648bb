//! TinyStories download through the system `curl`.

use std::process::Command;

use clap::Args;
use serde::Serialize;

use crate::report::OutDir;
use ntpcap::{Error, Result};

const DEFAULT_URL: &str = "https://huggingface.co/datasets/roneneldan/TinyStories/resolve/main/TinyStories-valid.txt";
const SEPARATOR: &str = "<|endoftext|>";

#[derive(Args, Debug, Serialize)]
pub struct FetchArgs {
    #[arg(long, default_value = DEFAULT_URL)]
    url: String,
    /// Keep the first this many stories.
    #[arg(long, default_value_t = 1000)]
    stories: usize,
}

/// Stories are separated by end-of-text markers and may span lines.
fn one_per_line(raw: &str, limit: usize) -> String {
    raw.split(SEPARATOR)
        .map(|s| s.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|s| !s.is_empty())
        .take(limit)
        .map(|s| s + "\n")
        .collect()
}

pub fn run(a: &FetchArgs, out: &OutDir, seed: u64) -> Result<()> {
    let raw_path = out.path("tinystories.raw");
    let status = Command::new("curl")
        .args(["-fsSL", "-o"])
        .arg(&raw_path)
        .arg(&a.url)
        .status()?;
    if !status.success() {
        return Err(Error::InvalidArgument(format!("download failed: curl exited with {status}")));
    }
    let raw = std::fs::read_to_string(&raw_path)?;
    let text = one_per_line(&raw, a.stories);
    let p = out.write("tinystories.txt", &text)?;
    println!("stories {}", text.lines().count());
    println!("path {}", p.display());
    out.sidecar("fetch", seed, a)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_markers() {
        let raw = "Once upon\na time.\n<|endoftext|>\nThe end.\n<|endoftext|>\n";
        assert_eq!(one_per_line(raw, 10), "Once upon a time.\nThe end.\n");
        assert_eq!(one_per_line(raw, 1), "Once upon a time.\n");
    }
}

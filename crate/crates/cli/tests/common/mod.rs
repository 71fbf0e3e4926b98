//! Helpers shared by the CLI integration tests.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sega"))
}

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn config(name: &str) -> PathBuf {
    repo_root().join("configs").join(name)
}

pub fn latent(name: &str) -> PathBuf {
    repo_root().join("configs/latents").join(name)
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).env("RUST_LOG", "off").output().expect("binary runs")
}

pub fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exited normally")
}

pub fn stdout(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 output")
}

/// One committed regression case: a command line and the files it must
/// reproduce byte for byte.
pub struct Case {
    pub name: &'static str,
    pub args: Vec<String>,
    /// `None`: compare stdout to `golden/<name>`. `Some(files)`: the command
    /// gets `--out-dir` and each file is compared to `golden/<name>/<file>`.
    pub files: Option<&'static [&'static str]>,
}

const TRAJECTORY_FILES: &[&str] = &[
    "scaling_map_H.csv",
    "scaling_map_W.csv",
    "spectral_heatmap.csv",
    "entropy_trace.csv",
    "summary.json",
];

fn s(p: PathBuf) -> String {
    p.to_str().expect("utf-8 path").to_string()
}

pub fn cases() -> Vec<Case> {
    let owned = |v: &[&str]| v.iter().map(|a| a.to_string()).collect::<Vec<_>>();
    let with = |mut head: Vec<String>, tail: &[&str]| {
        head.extend(owned(tail));
        head
    };
    vec![
        Case {
            name: "rope_table_yarn.csv",
            args: owned(&["rope-table", "--dim", "16", "--method", "yarn", "--ratio", "4"]),
            files: None,
        },
        Case {
            name: "rope_table_ntk_strong.csv",
            args: owned(&["rope-table", "--dim", "32", "--method", "ntk_strong", "--ratio", "2"]),
            files: None,
        },
        Case {
            name: "modulate_sinusoid.json",
            args: with(
                owned(&["modulate", "--latent"]),
                &[&s(latent("sinusoid_16.segl")), "--config", &s(config("modulate.json")), "--ratio", "2"],
            ),
            files: None,
        },
        Case {
            name: "modulate_white_noise.json",
            args: with(
                owned(&["modulate", "--latent"]),
                &[&s(latent("white_noise_32.segl")), "--config", &s(config("modulate.json")), "--ratio", "2"],
            ),
            files: None,
        },
        Case {
            name: "spectrum_sinusoid.csv",
            args: with(owned(&["spectrum", "--latent"]), &[&s(latent("sinusoid_16.segl"))]),
            files: None,
        },
        Case {
            name: "attn_map_sinusoid.csv",
            args: with(
                owned(&["attn-map", "--latent"]),
                &[&s(latent("sinusoid_16.segl")), "--config", &s(config("modulate.json")), "--token", "8,8", "--sega"],
            ),
            files: None,
        },
        Case {
            name: "entropy_sinusoid.csv",
            args: with(
                owned(&["entropy", "--latent"]),
                &[&s(latent("sinusoid_16.segl")), "--config", &s(config("modulate.json"))],
            ),
            files: None,
        },
        Case {
            name: "trajectory_small",
            args: with(owned(&["trajectory", "--config"]), &[&s(config("small.json"))]),
            files: Some(TRAJECTORY_FILES),
        },
        Case {
            name: "heatmap_small",
            args: with(owned(&["heatmap", "--config"]), &[&s(config("small.json"))]),
            files: Some(&["spectral_heatmap.csv"]),
        },
    ]
}

/// Runs `case` and returns `(golden path, expected, actual)` per output.
/// With `SEGA_BLESS=1` the goldens are rewritten first.
pub fn check(case: &Case) -> Vec<(PathBuf, Vec<u8>, Vec<u8>)> {
    let bless = std::env::var_os("SEGA_BLESS").is_some();
    let mut results = Vec::new();
    match case.files {
        None => {
            let args: Vec<&str> = case.args.iter().map(String::as_str).collect();
            let actual = stdout(&args).into_bytes();
            let path = golden_dir().join(case.name);
            if bless {
                fs::write(&path, &actual).unwrap();
            }
            let expected = fs::read(&path).unwrap_or_default();
            results.push((path, expected, actual));
        }
        Some(files) => {
            let tmp = tempfile::tempdir().unwrap();
            let mut args: Vec<&str> = case.args.iter().map(String::as_str).collect();
            let dir = tmp.path().to_str().unwrap();
            args.extend(["--out-dir", dir]);
            stdout(&args);
            let gdir = golden_dir().join(case.name);
            if bless {
                fs::create_dir_all(&gdir).unwrap();
            }
            for f in files {
                let actual = fs::read(tmp.path().join(f)).unwrap();
                let path = gdir.join(f);
                if bless {
                    fs::write(&path, &actual).unwrap();
                }
                let expected = fs::read(&path).unwrap_or_default();
                results.push((path, expected, actual));
            }
        }
    }
    results
}

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use itemgauge_core::io;
use itemgauge_core::irt::{flag_items, FlagThresholds};
use itemgauge_core::sim::{realize_item, SimBank, TemplateSpec};
use itemgauge_core::{Criterion, Domain, IrtItemParams, Mcq, N_CRITERIA};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Outcome {
    pub code: i32,
    pub stderr: String,
}

pub fn itemgauge(args: &[&str], env: &[(&str, &str)]) -> Outcome {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_itemgauge"));
    cmd.args(args).env_remove("ITEMGAUGE_VERIFIER_URL").env_remove("ITEMGAUGE_VERIFIER_KEY");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let Output { status, stderr, .. } = cmd.output().expect("binary runs");
    Outcome { code: status.code().unwrap_or(-1), stderr: String::from_utf8_lossy(&stderr).into_owned() }
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

pub fn write_config(dir: &Path, name: &str, value: serde_json::Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(&value).unwrap()).unwrap();
    path
}

/// Every file in `dir` by name.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let e = e.unwrap();
        out.insert(e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap());
    }
    out
}

/// True parameters of a simulated bank written as params.csv.
pub fn write_true_params(bank: &SimBank, path: &Path) -> Vec<IrtItemParams> {
    let params: Vec<IrtItemParams> = bank
        .truth
        .items
        .iter()
        .map(|t| IrtItemParams {
            item_id: t.item_id.clone(),
            concept_id: t.concept_id.clone(),
            alpha: t.alpha,
            delta: t.delta,
            n_responses: 1000,
            flags: Default::default(),
        })
        .collect();
    let (params, _) = flag_items(params, &FlagThresholds::default());
    io::write_params(path, &params).unwrap();
    params
}

pub fn single_flaw_bank() -> Vec<Mcq> {
    Criterion::ALL
        .iter()
        .map(|c| {
            let mut flaws = [false; N_CRITERIA];
            flaws[c.index()] = true;
            let mut rng = ChaCha8Rng::seed_from_u64(c.index() as u64);
            let (stem, options, correct_index) = realize_item(&TemplateSpec { flaws, unit: 2 }, &mut rng);
            Mcq {
                item_id: format!("f{:02}", c.index()),
                concept_id: "c0".into(),
                domain: Domain::Math,
                stem,
                options,
                correct_index,
            }
        })
        .collect()
}

/// Minimal HTTP endpoint answering every POST with `body`. Returns its URL.
pub fn stub_verifier(body: &'static str) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/verify", listener.local_addr().unwrap());
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut out = stream;
                loop {
                    let mut len = 0usize;
                    let mut line = String::new();
                    loop {
                        line.clear();
                        if reader.read_line(&mut line).unwrap_or(0) == 0 {
                            return;
                        }
                        let l = line.trim_end();
                        if l.is_empty() {
                            break;
                        }
                        if let Some((k, v)) = l.split_once(':') {
                            if k.eq_ignore_ascii_case("content-length") {
                                len = v.trim().parse().unwrap_or(0);
                            }
                        }
                    }
                    let mut buf = vec![0u8; len];
                    if reader.read_exact(&mut buf).is_err() {
                        return;
                    }
                    let resp = format!(
                        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
                        body.len()
                    );
                    if out.write_all(resp.as_bytes()).is_err() {
                        return;
                    }
                }
            });
        }
    });
    url
}

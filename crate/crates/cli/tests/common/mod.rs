#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use meshpyr::Pyramid;

pub fn meshpyr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meshpyr")).args(args).output().expect("binary runs")
}

/// Runs the binary and checks its exit code, returning stdout.
pub fn expect(code: i32, args: &[&str]) -> String {
    let out = meshpyr(args);
    assert_eq!(out.status.code(), Some(code), "meshpyr {args:?}\nstderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

/// The last JSON line of a command's stdout.
pub fn last_json(stdout: &str) -> serde_json::Value {
    serde_json::from_str(stdout.lines().last().expect("some output")).expect("json line")
}

pub fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Octant of each finest-level face center, as `face_id,label` CSV.
pub fn octant_labels_csv(p: &Pyramid) -> String {
    let fine = p.finest();
    let mut s = String::from("face_id,label\n");
    for f in fine.faces() {
        let c = fine.face_geometry(f).unwrap().center;
        let l = usize::from(c.x >= 0.0) + 2 * usize::from(c.y >= 0.0) + 4 * usize::from(c.z >= 0.0);
        s.push_str(&format!("{f},{l}\n"));
    }
    s
}

/// Every file below `dir`, keyed by relative path.
pub fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

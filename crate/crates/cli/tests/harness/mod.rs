#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use tempfile::TempDir;

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ctxmine"));
    c.env_remove("CTXMINE_STORE").env_remove("RUST_BACKTRACE");
    c
}

/// A temporary workspace driven through the binary.
pub struct Ws {
    pub dir: TempDir,
}

impl Ws {
    pub fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn join(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }

    pub fn cmd(&self, args: &[&str]) -> Command {
        let mut c = bin();
        c.arg("-w").arg(self.path()).args(args);
        c
    }

    pub fn run(&self, args: &[&str]) -> Output {
        self.cmd(args).output().unwrap()
    }

    /// Runs and returns stdout, panicking with stderr on failure.
    pub fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "ctxmine {args:?} failed:\n{}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    /// Writes a synthetic archive and ingests it with only the first topic
    /// as a seed context.
    pub fn seeded(topics: usize) -> Self {
        let ws = Self::new();
        ws.ok(&[
            "synth",
            "--out",
            ws.join("data").to_str().unwrap(),
            "--topics",
            &topics.to_string(),
        ]);
        let contexts = std::fs::read_to_string(ws.join("data/contexts.jsonl")).unwrap();
        let first = contexts.lines().next().unwrap();
        std::fs::write(ws.join("seed.jsonl"), format!("{first}\n")).unwrap();
        ws.ok(&[
            "ingest",
            ws.join("data/posts.jsonl").to_str().unwrap(),
            "--users",
            ws.join("data/users.jsonl").to_str().unwrap(),
            "--contexts",
            ws.join("seed.jsonl").to_str().unwrap(),
        ]);
        ws
    }

    pub fn serve(&self) -> Server {
        let mut child = self
            .cmd(&["serve", "--port", "0", "--threads", "2"])
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap())
            .read_line(&mut line)
            .unwrap();
        let addr = line
            .trim()
            .strip_prefix("listening on http://")
            .unwrap_or_else(|| panic!("unexpected banner {line:?}"))
            .to_string();
        Server { child, addr }
    }
}

pub struct Server {
    child: Child,
    pub addr: String,
}

impl Server {
    pub fn get(&self, path: &str) -> (u16, String) {
        http(&self.addr, "GET", path, "")
    }

    pub fn post(&self, path: &str, body: &str) -> (u16, String) {
        http(&self.addr, "POST", path, body)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// One request over a fresh connection; returns status and body.
pub fn http(addr: &str, method: &str, path: &str, body: &str) -> (u16, String) {
    let mut s = TcpStream::connect(addr).unwrap();
    write!(
        s,
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut raw = String::new();
    s.read_to_string(&mut raw).unwrap();
    let (head, rest) = raw.split_once("\r\n\r\n").expect("response head");
    let status = head.split(' ').nth(1).unwrap().parse().unwrap();
    (status, rest.to_string())
}

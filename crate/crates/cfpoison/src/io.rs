//! Fake-user rating files: `user,item,rating` on dense indices, first line `#malicious,items`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use cfpoison_core::ratings::MaliciousMatrix;

pub fn write_malicious(path: &Path, mt: &MaliciousMatrix) -> Result<()> {
    let mut w = BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    );
    writeln!(w, "#{},{}", mt.num_malicious(), mt.num_items())?;
    writeln!(w, "user,item,rating")?;
    for r in mt.entries() {
        writeln!(w, "{},{},{}", r.user, r.item, r.value)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_malicious(path: &Path) -> Result<MaliciousMatrix> {
    let file = File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut lines = BufReader::new(file).lines();
    let shape = lines
        .next()
        .transpose()?
        .ok_or_else(|| anyhow!("{}: empty file", path.display()))?;
    let (m, n) = shape
        .strip_prefix('#')
        .and_then(|s| s.split_once(','))
        .ok_or_else(|| anyhow!("line 1: expected #<malicious>,<items>"))?;
    let m: usize = m.trim().parse().context("line 1: fake-user count")?;
    let n: usize = n.trim().parse().context("line 1: item count")?;
    lines.next().transpose()?;
    let mut triples = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = k + 3;
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 {
            bail!("line {lineno}: expected 3 fields, got {}", f.len());
        }
        let user: usize = f[0].parse().with_context(|| format!("line {lineno}: user"))?;
        let item: usize = f[1].parse().with_context(|| format!("line {lineno}: item"))?;
        let value: f64 = f[2].parse().with_context(|| format!("line {lineno}: rating"))?;
        triples.push((user, item, value));
    }
    Ok(MaliciousMatrix::new(m, n, triples)?)
}

//! Line-oriented lattice text format.
//!
//! ```text
//! UTT <id>
//! NUMNODES <n>
//! ARC <from> <to> <word> <acoustic_logprob> <lm_logprob>
//! FINAL <node>
//!
//! ```
//!
//! Node 0 is the start node and a blank line (or end of input) terminates a
//! lattice. Lines starting with `#` are comments. Scores are written with six
//! decimal places.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use super::{Lattice, LatticeError, Result};
use crate::symbols::SymbolTable;

fn parse_err(line: usize, message: impl Into<String>) -> LatticeError {
    LatticeError::Parse {
        line,
        message: message.into(),
    }
}

struct Pending {
    lattice: Lattice,
    header_line: usize,
}

pub fn read_lattices<R: BufRead>(reader: R, symbols: &mut SymbolTable) -> Result<Vec<Lattice>> {
    let mut out: Vec<Lattice> = Vec::new();
    let mut ids: HashSet<String> = HashSet::new();
    let mut utt: Option<(String, usize)> = None;
    let mut pending: Option<Pending> = None;

    let mut finish = |pending: &mut Option<Pending>,
                      utt: &mut Option<(String, usize)>,
                      out: &mut Vec<Lattice>|
     -> Result<()> {
        if let Some((_, line)) = utt.take() {
            if pending.is_none() {
                return Err(parse_err(line, "UTT without NUMNODES"));
            }
        }
        if let Some(p) = pending.take() {
            if p.lattice.topo_order().is_err() {
                return Err(parse_err(p.header_line, "lattice contains a cycle"));
            }
            if !ids.insert(p.lattice.utterance_id().to_string()) {
                return Err(LatticeError::DuplicateUtteranceId(
                    p.lattice.utterance_id().to_string(),
                ));
            }
            out.push(p.lattice);
        }
        Ok(())
    };

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.starts_with('#') {
            continue;
        }
        if trimmed.is_empty() {
            finish(&mut pending, &mut utt, &mut out)?;
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        match fields[0] {
            "UTT" => {
                if utt.is_some() || pending.is_some() {
                    return Err(parse_err(lineno, "UTT inside an unterminated lattice"));
                }
                if fields.len() != 2 {
                    return Err(parse_err(lineno, "expected `UTT <id>`"));
                }
                utt = Some((fields[1].to_string(), lineno));
            }
            "NUMNODES" => {
                let Some((id, header_line)) = utt.take() else {
                    return Err(parse_err(lineno, "NUMNODES before UTT"));
                };
                if fields.len() != 2 {
                    return Err(parse_err(lineno, "expected `NUMNODES <n>`"));
                }
                let n: usize = fields[1]
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("bad node count `{}`", fields[1])))?;
                let lattice = Lattice::new(id, n).map_err(|e| parse_err(lineno, e.to_string()))?;
                pending = Some(Pending {
                    lattice,
                    header_line,
                });
            }
            "ARC" => {
                let Some(p) = pending.as_mut() else {
                    return Err(parse_err(lineno, "ARC before NUMNODES"));
                };
                if fields.len() != 6 {
                    return Err(parse_err(
                        lineno,
                        format!("ARC needs 5 fields, found {}", fields.len() - 1),
                    ));
                }
                let node = |s: &str| -> Result<usize> {
                    s.parse()
                        .map_err(|_| parse_err(lineno, format!("bad node `{s}`")))
                };
                let score = |s: &str| -> Result<f64> {
                    s.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| parse_err(lineno, format!("bad score `{s}`")))
                };
                let from = node(fields[1])?;
                let to = node(fields[2])?;
                let word = symbols.intern(fields[3]);
                let ac = score(fields[4])?;
                let lm = score(fields[5])?;
                p.lattice
                    .add_arc(from, to, word, ac, lm)
                    .map_err(|e| parse_err(lineno, e.to_string()))?;
            }
            "FINAL" => {
                let Some(p) = pending.as_mut() else {
                    return Err(parse_err(lineno, "FINAL before NUMNODES"));
                };
                if fields.len() != 2 {
                    return Err(parse_err(lineno, "expected `FINAL <node>`"));
                }
                let n: usize = fields[1]
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("bad node `{}`", fields[1])))?;
                p.lattice
                    .set_final(n)
                    .map_err(|e| parse_err(lineno, e.to_string()))?;
            }
            other => return Err(parse_err(lineno, format!("unknown record `{other}`"))),
        }
    }
    finish(&mut pending, &mut utt, &mut out)?;
    Ok(out)
}

pub fn write_lattice<W: Write>(w: &mut W, lattice: &Lattice, symbols: &SymbolTable) -> Result<()> {
    writeln!(w, "UTT {}", lattice.utterance_id())?;
    writeln!(w, "NUMNODES {}", lattice.num_nodes())?;
    for a in lattice.arcs() {
        writeln!(
            w,
            "ARC {} {} {} {:.6} {:.6}",
            a.from,
            a.to,
            symbols.word(a.word),
            a.acoustic,
            a.lm
        )?;
    }
    for f in lattice.finals() {
        writeln!(w, "FINAL {f}")?;
    }
    writeln!(w)?;
    Ok(())
}

pub fn write_lattices<W: Write>(
    mut w: W,
    lattices: &[Lattice],
    symbols: &SymbolTable,
) -> Result<()> {
    for l in lattices {
        write_lattice(&mut w, l, symbols)?;
    }
    Ok(())
}

//! Recorded runs: one wire message per line.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::wire::{parse_message, WireMessage};

/// Reads every message of a replay file, checking that timestamps never go
/// backwards for any machine. The first bad line aborts with its number.
pub fn load_replay(path: impl AsRef<Path>) -> Result<Vec<WireMessage>> {
    let file = File::open(path)?;
    read_replay(BufReader::new(file))
}

pub fn read_replay(reader: impl BufRead) -> Result<Vec<WireMessage>> {
    let mut out = Vec::new();
    let mut last: BTreeMap<String, i64> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let msg = parse_message(line.as_bytes()).map_err(|e| Error::Parse {
            line: line_no,
            message: match e {
                Error::RejectedInput(m) => m,
                other => other.to_string(),
            },
        })?;
        let machine = msg.machine_id().unwrap_or("").to_string();
        let ts = msg.ts();
        if let Some(&prev) = last.get(&machine) {
            if ts < prev {
                return Err(Error::TsRegression {
                    line: line_no,
                    machine,
                    last: prev,
                    got: ts,
                });
            }
        }
        last.insert(machine, ts);
        out.push(msg);
    }
    Ok(out)
}

pub fn write_replay<'a>(path: impl AsRef<Path>, messages: impl IntoIterator<Item = &'a WireMessage>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for m in messages {
        writeln!(w, "{}", m.to_line())?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input() {
        assert!(read_replay(&b""[..]).unwrap().is_empty());
    }

    #[test]
    fn regression_cites_line() {
        let text = concat!(
            r#"{"t":"trans","ts":10,"machine":"m","from":0,"to":1,"by":"program"}"#, "\n",
            r#"{"t":"frame","ts":11,"machine":"m","op":1,"r":{}}"#, "\n",
            r#"{"t":"frame","ts":9,"machine":"m","op":1,"r":{}}"#, "\n",
        );
        match read_replay(text.as_bytes()) {
            Err(Error::TsRegression { line, last, got, .. }) => assert_eq!((line, last, got), (3, 11, 9)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_line_cites_line() {
        let text = "\n{\"t\":\"frame\",\"ts\":1,\"machine\":\"m\",\"op\":1,\"r\":{}}\n{oops}\n";
        match read_replay(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}

//! Seed lists: comma-separated items, each `n`, `a..b` or `a..=b`.

use gsbeats::{Error, Result};

pub fn parse(text: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let bad = || Error::invalid("seeds", format!("cannot read `{item}`"));
        if let Some((a, b)) = item.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let (b, inclusive) = match b.strip_prefix('=') {
                Some(rest) => (rest, true),
                None => (b, false),
            };
            let b: u64 = b.trim().parse().map_err(|_| bad())?;
            if inclusive {
                out.extend(a..=b);
            } else {
                out.extend(a..b);
            }
        } else {
            out.push(item.parse().map_err(|_| bad())?);
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    if let Some(dup) = out.iter().find(|s| !seen.insert(**s)) {
        return Err(Error::invalid("seeds", format!("seed {dup} appears twice")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forms() {
        assert_eq!(parse("1,2, 7").unwrap(), vec![1, 2, 7]);
        assert_eq!(parse("3..6").unwrap(), vec![3, 4, 5]);
        assert_eq!(parse("3..=5,9").unwrap(), vec![3, 4, 5, 9]);
        assert!(parse("").unwrap().is_empty());
        assert!(parse("x").is_err());
        assert!(parse("1,1").is_err());
    }
}

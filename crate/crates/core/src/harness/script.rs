use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::trainer::NetworkChange;

/// A network change applied just before iteration `at` (1-based).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChangeEntry {
    pub at: usize,
    #[serde(flatten)]
    pub change: NetworkChange,
}

fn parse_at_ids(arg: &str) -> Result<(usize, Vec<usize>), HarnessError> {
    let bad = |m: &str| HarnessError::Config(format!("`{arg}`: {m} (expected ITERATION:ID,ID,...)"));
    let (at, ids) = arg.split_once(':').ok_or_else(|| bad("missing `:`"))?;
    let at: usize = at.trim().parse().map_err(|_| bad("iteration is not a whole number"))?;
    if at == 0 {
        return Err(bad("iterations are numbered from 1"));
    }
    let ids = ids
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| bad("node ids must be whole numbers")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((at, ids))
}

/// Parses `AT:ID,ID,...`, e.g. `63:6,7,8`.
pub fn parse_remove_arg(arg: &str) -> Result<ChangeEntry, HarnessError> {
    let (at, ids) = parse_at_ids(arg)?;
    Ok(ChangeEntry { at, change: NetworkChange::Remove(ids) })
}

/// Same syntax as [`parse_remove_arg`], re-enabling the listed sensors.
pub fn parse_restore_arg(arg: &str) -> Result<ChangeEntry, HarnessError> {
    let (at, ids) = parse_at_ids(arg)?;
    Ok(ChangeEntry { at, change: NetworkChange::Restore(ids) })
}

/// Iterations must be strictly increasing and within the run.
pub fn validate_script(entries: &[ChangeEntry], iterations: usize) -> Result<(), HarnessError> {
    for (k, e) in entries.iter().enumerate() {
        if e.at == 0 || e.at > iterations {
            return Err(HarnessError::Config(format!(
                "change at iteration {} lies outside the run of {iterations} iterations",
                e.at
            )));
        }
        if k > 0 && e.at <= entries[k - 1].at {
            return Err(HarnessError::Config(format!(
                "change iterations must be strictly increasing ({} follows {})",
                e.at,
                entries[k - 1].at
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn remove_syntax() {
        let e = parse_remove_arg("63:6,7,8").unwrap();
        assert_eq!(e, ChangeEntry { at: 63, change: NetworkChange::Remove(vec![6, 7, 8]) });
        assert_eq!(parse_remove_arg(" 2 : 4 , 5").unwrap().change, NetworkChange::Remove(vec![4, 5]));
        for bad in ["", "63", "63:", ":1", "0:1", "x:1", "3:1,,2", "3:-1", "3:1;2"] {
            assert!(parse_remove_arg(bad).is_err(), "{bad:?} accepted");
        }
        assert_eq!(parse_restore_arg("5:1").unwrap().change, NetworkChange::Restore(vec![1]));
    }

    #[test]
    fn script_order() {
        let e = |at| ChangeEntry { at, change: NetworkChange::Remove(vec![1]) };
        validate_script(&[e(3), e(7)], 10).unwrap();
        assert!(validate_script(&[e(7), e(7)], 10).is_err());
        assert!(validate_script(&[e(7), e(3)], 10).is_err());
        assert!(validate_script(&[e(11)], 10).is_err());
    }

    #[test]
    fn toml_form() {
        #[derive(Serialize, Deserialize, PartialEq, Debug)]
        struct Doc {
            changes: Vec<ChangeEntry>,
        }
        let text = "[[changes]]\nat = 63\nremove = [6, 7, 8]\n";
        let doc: Doc = toml::from_str(text).unwrap();
        assert_eq!(doc.changes, vec![parse_remove_arg("63:6,7,8").unwrap()]);
        assert_eq!(toml::from_str::<Doc>(&toml::to_string(&doc).unwrap()).unwrap(), doc);
    }

    proptest! {
        #[test]
        fn formatted_args_parse_back(at in 1usize..10_000, ids in prop::collection::vec(0usize..1000, 1..8)) {
            let text = format!("{at}:{}", ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(","));
            let e = parse_remove_arg(&text).unwrap();
            prop_assert_eq!(e, ChangeEntry { at, change: NetworkChange::Remove(ids) });
        }

        #[test]
        fn arbitrary_text_never_panics(s in "\\PC{0,40}") {
            let _ = parse_remove_arg(&s);
        }
    }
}

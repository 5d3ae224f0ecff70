//! Plain SMILES corpus files: one molecule per line, `SMILES [id]`,
//! whitespace separated. Blank lines and `#` comments are skipped; a missing
//! id becomes `mol<line>`.

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SmilesRecord {
    /// 1-based line number in the source.
    pub line: usize,
    pub id: String,
    pub smiles: String,
}

pub fn read_smiles_lines(text: &str) -> Vec<SmilesRecord> {
    text.lines()
        .enumerate()
        .filter_map(|(i, raw)| {
            let l = raw.trim();
            if l.is_empty() || l.starts_with('#') {
                return None;
            }
            let mut parts = l.split_whitespace();
            let smiles = parts.next()?.to_string();
            let id = parts.next().map_or_else(|| format!("mol{}", i + 1), str::to_string);
            Some(SmilesRecord {
                line: i + 1,
                id,
                smiles,
            })
        })
        .collect()
}

pub fn write_smiles_lines<'a>(records: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    let mut out = String::new();
    for (id, smiles) in records {
        out.push_str(smiles);
        out.push(' ');
        out.push_str(id);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_default_to_line_numbers() {
        let r = read_smiles_lines("CCO ethanol\n\n# x\nc1ccccc1\n");
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].id, "ethanol");
        assert_eq!(r[1].id, "mol4");
        assert_eq!(r[1].line, 4);
        let text = write_smiles_lines(r.iter().map(|r| (r.id.as_str(), r.smiles.as_str())));
        assert_eq!(read_smiles_lines(&text)[0], r[0]);
    }
}

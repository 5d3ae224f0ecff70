use std::collections::BTreeSet;

use super::SplitError;

pub const INDEX_HEADER: &str = "id,smiles,cell_line,tissue,tumor_type";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexRecord {
    pub id: String,
    pub smiles: String,
    pub cell_line: String,
    pub tissue: String,
    pub tumor_type: String,
}

/// Records with unique ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetIndex {
    records: Vec<IndexRecord>,
}

impl DatasetIndex {
    pub fn new(records: Vec<IndexRecord>) -> Result<Self, SplitError> {
        let mut seen = BTreeSet::new();
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(SplitError::DuplicateId(r.id.clone()));
            }
        }
        Ok(DatasetIndex { records })
    }

    pub fn records(&self) -> &[IndexRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn parse(text: &str) -> Result<Self, SplitError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some((_, h)) if h.trim() == INDEX_HEADER => {}
            other => {
                return Err(SplitError::Parse {
                    line: other.map_or(0, |(i, _)| i + 1),
                    msg: format!("expected header {INDEX_HEADER}"),
                })
            }
        }
        let records = lines
            .map(|(i, l)| {
                let f: Vec<&str> = l.trim().split(',').map(str::trim).collect();
                if f.len() != 5 || f.iter().any(|s| s.is_empty()) {
                    return Err(SplitError::Parse {
                        line: i + 1,
                        msg: "expected five non-empty fields".into(),
                    });
                }
                Ok(IndexRecord {
                    id: f[0].into(),
                    smiles: f[1].into(),
                    cell_line: f[2].into(),
                    tissue: f[3].into(),
                    tumor_type: f[4].into(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        DatasetIndex::new(records)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{INDEX_HEADER}\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{},{},{}\n", r.id, r.smiles, r.cell_line, r.tissue, r.tumor_type));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_write() {
        let text = "id,smiles,cell_line,tissue,tumor_type\nr1,CCO,A549,Lung,NSCLC\n\nr2,c1ccccc1,MCF7,Breast,BRCA\n";
        let d = DatasetIndex::parse(text).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.records()[1].tissue, "Breast");
        assert_eq!(DatasetIndex::parse(&d.to_text()).unwrap(), d);
        assert!(matches!(
            DatasetIndex::parse("id,smiles\n"),
            Err(SplitError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            DatasetIndex::parse(&format!("{INDEX_HEADER}\nr1,CCO,A,B\n")),
            Err(SplitError::Parse { line: 2, .. })
        ));
        assert_eq!(
            DatasetIndex::parse(&format!("{INDEX_HEADER}\nr1,C,a,b,c\nr1,C,a,b,c\n")),
            Err(SplitError::DuplicateId("r1".into()))
        );
    }
}

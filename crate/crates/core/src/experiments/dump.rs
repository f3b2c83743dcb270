use std::path::Path;

use super::write_csv;
use crate::checkpoint::Checkpoint;
use crate::data::{Split, TokenizedDataset};
use crate::error::Result;
use crate::real::Real;

/// Writes every token's encoder input (`post-fusion`, time included) and
/// its first-layer output (`post-layer-1`) for up to `limit` entities of
/// `split`. Returns the number of data rows, twice the token count.
pub fn dump_embeddings<T: Real>(
    ckpt: &Checkpoint<T>,
    ds: &TokenizedDataset,
    split: Split,
    limit: Option<usize>,
    path: &Path,
) -> Result<usize> {
    ckpt.check_schema(&ds.schema)?;
    let d = ckpt.model.config.fusion.d;
    let mut header: Vec<String> = [
        "token_id",
        "entity_id",
        "position",
        "feature",
        "time",
        "stage",
    ]
    .map(String::from)
    .to_vec();
    header.extend((0..d).map(|j| format!("v{j}")));

    let seqs = ds.split(split);
    let mut rows = Vec::new();
    let mut token_id = 0usize;
    for seq in seqs.iter().take(limit.unwrap_or(usize::MAX)) {
        let (x, h) = ckpt.model.embeddings_with_first_layer(seq)?;
        for (pos, tok) in seq.tokens.iter().enumerate() {
            for (stage, m) in [("post-fusion", &x), ("post-layer-1", &h)] {
                let mut row = vec![
                    token_id.to_string(),
                    seq.entity_id.clone(),
                    pos.to_string(),
                    ckpt.feature_names[tok.feature_id].clone(),
                    tok.time.to_string(),
                    stage.to_owned(),
                ];
                row.extend(m.row(pos).iter().map(|v| v.to_string()));
                rows.push(row);
            }
            token_id += 1;
        }
    }
    write_csv(path, &header, &rows)?;
    Ok(rows.len())
}

//! Tables rendered as natural-language passages.

use serde::{Deserialize, Serialize};

use super::{IngestError, Passage};
use crate::chain::prompts::{PromptCatalog, PromptVars};
use crate::gateway::{CompletionRequest, Gateway};
use crate::retrieval::{embed, top_k, VectorIndex};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedTable {
    #[serde(default)]
    pub caption: String,
    pub rows: Vec<Vec<String>>,
    /// Character offset of the table in the body text, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_position: Option<usize>,
}

impl ParsedTable {
    /// Pipe-delimited rendering; the first row is the header.
    pub fn to_pipe_text(&self) -> String {
        let cell = |c: &str| c.replace('|', "\\|").replace(['\n', '\r'], " ").trim().to_string();
        let line = |row: &[String]| format!("| {} |", row.iter().map(|c| cell(c)).collect::<Vec<_>>().join(" | "));
        let mut out = Vec::with_capacity(self.rows.len() + 1);
        if let Some((header, body)) = self.rows.split_first() {
            out.push(line(header));
            out.push(format!("|{}", " --- |".repeat(header.len().max(1))));
            out.extend(body.iter().map(|r| line(r)));
        }
        out.join("\n")
    }
}

/// Turns `table` into a table-derived passage numbered `passage_index`.
///
/// The caption is the retrieval query; the top-`k` body passages go into the
/// prompt next to the serialized table.
#[allow(clippy::too_many_arguments)]
pub fn contextualize_table(
    table: &ParsedTable,
    table_number: usize,
    passages: &[Passage],
    index: &VectorIndex,
    gateway: &Gateway,
    catalog: &PromptCatalog,
    k: usize,
    passage_index: usize,
) -> Result<Passage, IngestError> {
    if table.rows.is_empty() || table.rows.iter().all(|r| r.iter().all(|c| c.trim().is_empty())) {
        return Err(IngestError::EmptyTable { table: table_number });
    }
    let tag = format!("ingest/table-{table_number}");
    let query = embed(gateway, &table.caption, &tag).map_err(|e| IngestError::Table {
        table: table_number,
        detail: e.to_string(),
    })?;
    let hits = top_k(index, &query, k).map_err(|e| IngestError::Table { table: table_number, detail: e.to_string() })?;
    let context = crate::chain::format_context(passages, hits.iter().map(|h| h.passage));
    let prompt = catalog
        .render_table(&PromptVars {
            caption: Some(&table.caption),
            table: Some(&table.to_pipe_text()),
            context: Some(&context),
            ..PromptVars::default()
        })
        .map_err(|e| IngestError::Table { table: table_number, detail: e.to_string() })?;
    let reply = gateway
        .complete(&CompletionRequest::new(prompt, tag))
        .map_err(|source| IngestError::TableBackend { table: table_number, source })?;
    if reply.text.trim().is_empty() {
        return Err(IngestError::Table { table: table_number, detail: "backend returned an empty rendering".into() });
    }
    Ok(Passage::table_derived(passage_index, reply.text))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pipe_rendering_has_header_line() {
        let table = ParsedTable {
            caption: "Demographics".into(),
            rows: vec![
                vec!["Role".into(), "Count".into()],
                vec!["Radiologist".into(), "2".into()],
                vec!["a|b".into(), "multi\nline".into()],
            ],
            source_position: None,
        };
        assert_eq!(
            table.to_pipe_text(),
            "| Role | Count |\n| --- | --- |\n| Radiologist | 2 |\n| a\\|b | multi line |"
        );
    }
}

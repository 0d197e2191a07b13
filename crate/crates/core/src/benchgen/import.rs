use std::collections::BTreeSet;

use serde_json::Value;

use crate::error::GenError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawTask {
    /// Reference key (the `id` field when present, otherwise `name`).
    pub key: String,
    /// Display name used for collapse.
    pub name: String,
    pub parents: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawTaskDag {
    pub tasks: Vec<RawTask>,
    pub source_file: String,
}

const LIST_KEYS: [&str; 3] = ["tasks", "jobs", "nodes"];

fn find_list(v: &Value) -> Option<&Vec<Value>> {
    let obj = v.as_object()?;
    for k in LIST_KEYS {
        if let Some(Value::Array(a)) = obj.get(k) {
            return Some(a);
        }
    }
    for k in ["workflow", "specification"] {
        if let Some(inner) = obj.get(k) {
            if let Some(a) = find_list(inner) {
                return Some(a);
            }
        }
    }
    None
}

fn str_list(v: Option<&Value>) -> Vec<String> {
    match v {
        Some(Value::Array(a)) => a
            .iter()
            .filter_map(|x| match x {
                Value::String(s) => Some(s.clone()),
                Value::Object(o) => o.get("name").or_else(|| o.get("id")).and_then(Value::as_str).map(str::to_string),
                _ => None,
            })
            .collect(),
        _ => Vec::new(),
    }
}

/// Parses task/job/node lists (flat or nested under `workflow` / `specification`).
/// Parent links come from `parents`; `children` lists are folded in as well.
pub fn import_workflow_json(document: &str, source_file: &str) -> Result<RawTaskDag, GenError> {
    let root: Value = serde_json::from_str(document)
        .map_err(|e| GenError::Import(format!("{source_file}: line {} column {}: {e}", e.line(), e.column())))?;
    let list = find_list(&root)
        .ok_or_else(|| GenError::Import(format!("{source_file}: no tasks, jobs or nodes list")))?;

    let mut tasks: Vec<RawTask> = Vec::with_capacity(list.len());
    let mut children: Vec<(String, Vec<String>)> = Vec::new();
    for (i, item) in list.iter().enumerate() {
        let obj = item
            .as_object()
            .ok_or_else(|| GenError::Import(format!("{source_file}: entry {i} is not an object")))?;
        let name = obj.get("name").and_then(Value::as_str);
        let id = obj.get("id").and_then(Value::as_str);
        let (key, name) = match (id, name) {
            (Some(id), Some(n)) => (id.to_string(), n.to_string()),
            (Some(id), None) => (id.to_string(), id.to_string()),
            (None, Some(n)) => (n.to_string(), n.to_string()),
            (None, None) => return Err(GenError::Import(format!("{source_file}: entry {i} has no name"))),
        };
        let parents = str_list(obj.get("parents"));
        let kids = str_list(obj.get("children"));
        if !kids.is_empty() {
            children.push((key.clone(), kids));
        }
        tasks.push(RawTask { key, name, parents });
    }

    let keys: BTreeSet<String> = tasks.iter().map(|t| t.key.clone()).collect();
    if keys.len() != tasks.len() {
        let mut seen = BTreeSet::new();
        let dup = tasks.iter().find(|t| !seen.insert(&t.key)).map(|t| t.key.clone()).unwrap_or_default();
        return Err(GenError::Import(format!("{source_file}: duplicate task {dup}")));
    }
    for t in &tasks {
        if let Some(p) = t.parents.iter().find(|p| !keys.contains(*p)) {
            return Err(GenError::Import(format!("{source_file}: task {} references unknown parent {p}", t.key)));
        }
    }
    for (parent, kids) in children {
        for k in kids {
            let child = tasks
                .iter_mut()
                .find(|t| t.key == k)
                .ok_or_else(|| GenError::Import(format!("{source_file}: task {parent} references unknown child {k}")))?;
            if !child.parents.contains(&parent) {
                child.parents.push(parent.clone());
            }
        }
    }
    for t in &mut tasks {
        t.parents.sort();
        t.parents.dedup();
    }
    Ok(RawTaskDag { tasks, source_file: source_file.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_tasks() {
        let raw = import_workflow_json(r#"{"tasks":[{"name":"a"},{"name":"b","parents":["a"]}]}"#, "t").unwrap();
        assert_eq!(raw.tasks.len(), 2);
        assert_eq!(raw.tasks[1].parents, vec!["a".to_string()]);
    }

    #[test]
    fn jobs_key_is_equivalent() {
        let a = import_workflow_json(r#"{"tasks":[{"name":"a"},{"name":"b","parents":["a"]}]}"#, "t").unwrap();
        let b = import_workflow_json(r#"{"workflow":{"jobs":[{"name":"a"},{"name":"b","parents":["a"]}]}}"#, "t").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nested_specification_with_children() {
        let doc = r#"{"workflow":{"specification":{"tasks":[
            {"name":"a","id":"a_1","children":["b_1"]},
            {"name":"b","id":"b_1","parents":[]}]}}}"#;
        let raw = import_workflow_json(doc, "t").unwrap();
        assert_eq!(raw.tasks[1].parents, vec!["a_1".to_string()]);
        assert_eq!(raw.tasks[1].name, "b");
    }

    #[test]
    fn dangling_parent_names_task() {
        let err = import_workflow_json(r#"{"tasks":[{"name":"a","parents":["z"]}]}"#, "t").unwrap_err();
        assert!(err.to_string().contains("task a"), "{err}");
        assert!(err.to_string().contains('z'));
    }

    #[test]
    fn malformed_json_has_location() {
        let err = import_workflow_json("{\"tasks\": [\n{\"name\": }", "t").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}

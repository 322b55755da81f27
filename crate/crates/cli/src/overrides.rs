use serde_json::{Map, Value};

/// Parses `a.b.c=value`. The value is read as JSON when it parses as JSON
/// and kept as a plain string otherwise, so `seed=7` sets a number and
/// `input_root=data/in` sets a string.
pub fn parse_override(arg: &str) -> Result<(Vec<String>, Value), String> {
    let (key, raw) = arg
        .split_once('=')
        .ok_or_else(|| format!("override `{arg}` is not of the form KEY=VALUE"))?;
    let path: Vec<String> = key.split('.').map(str::to_string).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(format!("override key `{key}` has an empty segment"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((path, value))
}

/// Sets `value` at `path` inside `root`, creating objects along the way.
pub fn apply_override(root: &mut Value, path: &[String], value: Value) -> Result<(), String> {
    let mut cur = root;
    for (i, seg) in path.iter().enumerate() {
        if cur.is_null() {
            *cur = Value::Object(Map::new());
        }
        let obj = cur.as_object_mut().ok_or_else(|| {
            format!(
                "cannot set `{}`: `{}` is not an object",
                path.join("."),
                path[..i].join(".")
            )
        })?;
        if i + 1 == path.len() {
            obj.insert(seg.clone(), value);
            return Ok(());
        }
        cur = obj.entry(seg.clone()).or_insert(Value::Null);
    }
    Ok(())
}

//! CSV rendering of job results.

use esp_core::engine::JobResult;
use esp_core::workbook::Value;

fn number(x: f64) -> String {
    format!("{x}")
}

fn writer(out: Vec<u8>) -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(out)
}

fn cell(v: &Value) -> String {
    match v {
        Value::Number(x) => number(*x),
        other => other.display_text(),
    }
}

/// A `metric,value` block, a blank line, then `iteration,loss,default`
/// rows for Monte Carlo jobs; an `output,value` table for single runs.
pub fn result_csv(result: &JobResult) -> Result<Vec<u8>, csv::Error> {
    let body = &result.body;
    let mut head = writer(Vec::new());
    if let Some(m) = &body.metrics {
        head.write_record(["metric", "value"])?;
        let mut rows = vec![
            ("iterations".to_string(), m.iterations.to_string()),
            ("defaults".to_string(), m.defaults.to_string()),
            ("pd".to_string(), number(m.pd)),
            ("pd_stderr".to_string(), number(m.pd_stderr)),
            ("lgd".to_string(), m.lgd.map(number).unwrap_or_default()),
            ("expected_loss".to_string(), number(m.expected_loss)),
        ];
        rows.extend(
            m.loss_quantiles
                .iter()
                .map(|q| (format!("quantile_{}", q.level), number(q.loss))),
        );
        rows.push(("min_loss".into(), number(m.min_loss)));
        rows.push(("max_loss".into(), number(m.max_loss)));
        for (k, v) in rows {
            head.write_record([k, v])?;
        }
    } else if let Some(outputs) = &body.outputs {
        head.write_record(["output", "value"])?;
        for (k, v) in outputs {
            head.write_record([k.clone(), cell(v)])?;
        }
    }
    let mut out = head.into_inner().map_err(|e| e.into_error())?;
    if let Some(table) = &body.iterations {
        out.extend_from_slice(b"\r\n");
        let mut w = writer(out);
        w.write_record(["iteration", "loss", "default"])?;
        for r in table {
            w.write_record([r.iteration.to_string(), number(r.loss), r.default.to_string()])?;
        }
        out = w.into_inner().map_err(|e| e.into_error())?;
    }
    Ok(out)
}

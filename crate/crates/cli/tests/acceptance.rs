//! Acceptance suite for the ingestion pipeline: recomputed column summary
//! statistics from a synthetic dataset must match an independent oracle
//! exactly, end to end through the binary.

use std::path::Path;
use std::process::Command;

use limark::pattern::sample_dirichlet;
use limark::rng::StreamKey;
use rand::Rng;

fn limark_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_limark"))
}

/// Synthetic sector composition dataset: 278 municipalities, four sectors
/// as percentages summing to 100.
fn write_dataset(path: &Path, rows: usize, seed: u64) {
    let key = StreamKey::root(seed);
    let mut rng = key.rng();
    let mut csv = String::from("id,x,y,agriculture,industry,construction,services\n");
    for row in 0..rows {
        let c = sample_dirichlet(&[4.0, 4.5, 3.2, 13.4], &mut rng).unwrap();
        let x: f64 = rng.random::<f64>() * 300.0;
        let y: f64 = rng.random::<f64>() * 200.0;
        csv.push_str(&format!(
            "m{row},{x},{y},{},{},{},{}\n",
            100.0 * c.part(0),
            100.0 * c.part(1),
            100.0 * c.part(2),
            100.0 * c.part(3),
        ));
    }
    std::fs::write(path, csv).unwrap();
}

/// Independent column-statistics oracle: sort-based linear-interpolation
/// quantiles and the plain arithmetic mean, computed from the CSV text.
fn oracle_stats(csv_path: &Path, column: usize) -> (f64, f64, f64, f64, f64, f64) {
    let text = std::fs::read_to_string(csv_path).unwrap();
    let mut values: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|line| line.split(',').nth(column).unwrap().parse::<f64>().unwrap())
        .collect();
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    values.sort_by(f64::total_cmp);
    let quantile = |p: f64| -> f64 {
        let h = (n - 1) as f64 * p;
        let lo = h.floor() as usize;
        if lo + 1 >= n {
            values[n - 1]
        } else {
            values[lo] + (h - lo as f64) * (values[lo + 1] - values[lo])
        }
    };
    (
        values[0],
        quantile(0.25),
        mean,
        quantile(0.5),
        quantile(0.75),
        values[n - 1],
    )
}

#[test]
fn criterion_9_ingestion_fidelity() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("sectors.csv");
    write_dataset(&csv_path, 278, 20260823);

    let config_path = dir.path().join("config.toml");
    std::fs::write(
        &config_path,
        r#"
[dataset]
x_column = "x"
y_column = "y"
part_columns = ["agriculture", "industry", "construction", "services"]
id_column = "id"
"#,
    )
    .unwrap();

    let out_dir = dir.path().join("out");
    let output = limark_bin()
        .args(["ingest", "--csv"])
        .arg(&csv_path)
        .args(["--config"])
        .arg(&config_path)
        .args(["--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "ingest failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    // summary table renders the Min/Q1/Mean/Median/Q3/Max template
    assert!(stdout.contains("part"), "{stdout}");
    for header in ["min", "q1", "mean", "median", "q3", "max"] {
        assert!(stdout.contains(header), "missing column {header}: {stdout}");
    }
    assert!(stdout.contains("278 points"), "{stdout}");

    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out_dir.join("ingest_summary.json")).unwrap(),
    )
    .unwrap();
    let parts = summary["parts"].as_array().unwrap();
    assert_eq!(parts.len(), 4);

    let mut worst_exact = true;
    for (index, name) in ["agriculture", "industry", "construction", "services"]
        .iter()
        .enumerate()
    {
        // column 3 + index in the CSV (id, x, y come first)
        let (min, q1, mean, median, q3, max) = oracle_stats(&csv_path, 3 + index);
        let part = &parts[index];
        assert_eq!(part["part"].as_str().unwrap(), *name);
        for (field, oracle) in [
            ("min", min),
            ("q1", q1),
            ("mean", mean),
            ("median", median),
            ("q3", q3),
            ("max", max),
        ] {
            let got = part[field].as_f64().unwrap();
            if got != oracle {
                worst_exact = false;
                eprintln!("{name}.{field}: got {got}, oracle {oracle}");
            }
        }
    }
    println!(
        "acceptance criterion 9 (ingestion fidelity): {} — 278-row synthetic dataset, \
         4 sectors, summary statistics vs independent oracle, exact equality",
        if worst_exact { "PASS" } else { "FAIL" }
    );
    assert!(worst_exact, "criterion 9 failed");
}

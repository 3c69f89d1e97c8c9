use std::path::Path;
use std::process::Command;

fn wgpr(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_wgpr")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = wgpr(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn synth_train_eval_predict_compare() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    let (model, pred, res, cmp) = (p("m.txt"), p("pred.csv"), p("r.json"), p("c.json"));
    ok(&["synth", "--n-points", "400", "--seed", "3", "--right", "2,6,0.2", "--out", &p("d.csv")]);
    let common = ["--data", &p("d.csv"), "--pseudo-points", "15", "--split", "shuffled"];

    let mut args = vec!["train"];
    args.extend(common);
    args.extend(["--model", &model, "--predictions", &pred, "--out", &res]);
    ok(&args);
    let r = json(Path::new(&p("r.json")));
    assert_eq!(r["n_train"], 320);

    // Metrics recomputed from the prediction file.
    let text = std::fs::read_to_string(p("pred.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "x,y,mean,variance,model_index");
    let rows: Vec<Vec<f64>> =
        lines.map(|l| l.split(',').take(3).map(|c| c.parse().unwrap()).collect()).collect();
    let n = rows.len() as f64;
    let mse = rows.iter().map(|r| (r[1] - r[2]).powi(2)).sum::<f64>() / n;
    let ym = rows.iter().map(|r| r[1]).sum::<f64>() / n;
    let var = rows.iter().map(|r| (r[1] - ym).powi(2)).sum::<f64>() / n;
    assert!((mse.sqrt() - r["rmse"].as_f64().unwrap()).abs() < 1e-10);
    assert!((mse / var - r["smse"].as_f64().unwrap()).abs() < 1e-10);

    // Evaluating the saved model on the whole file.
    ok(&["eval", "--model", &p("m.txt"), "--data", &p("d.csv"), "--out", &p("e.json")]);
    let e = json(Path::new(&p("e.json")));
    assert_eq!(e["n_models"], r["n_models"]);
    assert_eq!(e["n_test"], 400);
    assert!(e["rmse"].as_f64().unwrap() < 0.5);

    // Predicting from inputs alone.
    std::fs::write(p("q.csv"), "x\n10\n200.5\n").unwrap();
    ok(&["predict", "--model", &p("m.txt"), "--data", &p("q.csv"), "--out", &p("q_out.csv")]);
    let q = std::fs::read_to_string(p("q_out.csv")).unwrap();
    assert_eq!(q.lines().count(), 3);
    assert!(q.lines().nth(1).unwrap().starts_with("10.0,,"));

    let mut args = vec!["compare"];
    args.extend(common);
    args.extend(["--epsilons", "1,inf", "--w-gens", "0.2", "--out", &cmp]);
    ok(&args);
    let c = json(Path::new(&p("c.json")));
    let rows = c.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1]["n_models"], 1);
    assert_eq!(rows[0]["n_models"], r["n_models"]);
    assert_eq!(rows[0]["rmse"], r["rmse"]);
}

#[test]
fn errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "x,y\n1,2\n2,x\n").unwrap();
    let out = wgpr(&["train", "--data", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("line 3"), "{msg}");

    let d = dir.path().join("two.csv");
    std::fs::write(&d, "a,b,y\n1,2,3\n").unwrap();
    let m = dir.path().join("m.txt");
    let data = dir.path().join("d.csv");
    ok(&["synth", "--n-points", "200", "--out", data.to_str().unwrap()]);
    ok(&["train", "--data", data.to_str().unwrap(), "--pseudo-points", "10", "--model", m.to_str().unwrap()]);
    let out = wgpr(&["eval", "--model", m.to_str().unwrap(), "--data", d.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("features"));
    let out = wgpr(&["train", "--data", dir.path().join("none.csv").to_str().unwrap()]);
    assert!(!out.status.success());
}

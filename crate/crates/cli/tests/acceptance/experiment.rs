use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use aquasight::data::{encode_png, generate_sample, SampleParams, Tint};
use aquasight::model::{load, save, WeightsFile};
use aquasight::pipeline::Classifier;
use aquasight::tensor::Tensor;
use aquasight::{Label, SeededRng};
use serde_json::Value;

use crate::Verdict;

const SEED: &str = "7";
const MAX_EPOCHS: usize = 30;
const TIME_BUDGET: Duration = Duration::from_secs(600);
const LATENCY_BUDGET_MS: f64 = 50.0;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_aquasight"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Result<String, String> {
    let out = bin().args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("`aquasight {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// The trained acceptance model and the dataset it was trained on.
#[derive(Clone)]
pub struct Model {
    dir: PathBuf,
    data: PathBuf,
    weights: PathBuf,
    elapsed: Duration,
}

/// gen-data and train through the CLI with default settings (seed 7, 30 epochs, 75% split).
pub fn train(work: &Path) -> Result<Model, String> {
    let data = work.join("data");
    let weights = work.join("model.aqsw");
    run(&["gen-data", "--out", s(&data), "--seed", SEED])?;
    let started = Instant::now();
    run(&["train", "--data", s(&data), "--out", s(&weights), "--seed", SEED, "--epochs", &MAX_EPOCHS.to_string()])?;
    Ok(Model {
        dir: work.to_path_buf(),
        data,
        weights,
        elapsed: started.elapsed(),
    })
}

impl Model {
    fn classifier(&self) -> Result<Classifier, String> {
        Classifier::load(&self.weights).map_err(|e| e.to_string())
    }

    pub fn check_training(&self) -> Verdict {
        let r = read_json(&self.dir.join("model.aqsw.report.json"))?;
        let epochs = r["epoch_losses"].as_array().map_or(0, Vec::len);
        let (train, val) = (r["train_size"].as_u64().unwrap_or(0), r["validation_size"].as_u64().unwrap_or(0));
        let acc = r["validation_accuracy"].as_f64().ok_or("no validation accuracy")?;
        let loss = r["validation_loss"].as_f64().ok_or("no validation loss")?;
        let correct = (acc * val as f64).round() as u64;
        let losses: Vec<f64> = r["epoch_losses"].as_array().into_iter().flatten().filter_map(Value::as_f64).collect();
        let decreasing = losses.len() >= 5 && losses[..5].windows(2).all(|w| w[1] < w[0] + 1e-6);
        verdict(
            (train, val) == (78, 27) && epochs <= MAX_EPOCHS && correct >= 26 && loss <= 0.2 && self.elapsed <= TIME_BUDGET,
            format!(
                "split {train}/{val}, {epochs} epochs in {:.1}s, validation accuracy {correct}/{val} ({acc:.4}), validation BCE {loss:.4}; first-5-epoch training loss decreasing: {decreasing}",
                self.elapsed.as_secs_f64()
            ),
        )
    }

    pub fn prediction_statistics(&self) -> Verdict {
        let report = self.dir.join("validation.eval.json");
        run(&["eval", "--data", s(&self.data), "--model", s(&self.weights), "--subset", "validation", "--seed", SEED, "--report", s(&report)])?;
        let r = read_json(&report)?;
        let samples = r["samples"].as_array().ok_or("no samples")?;
        let by_predicted = |class: &str| r["stats"][class]["mean"].as_f64();
        let by_label = |label: &str| {
            let raws: Vec<f64> = samples.iter().filter(|s| s["label"] == label).filter_map(|s| s["raw"].as_f64()).collect();
            (!raws.is_empty()).then(|| raws.iter().sum::<f64>() / raws.len() as f64)
        };
        let (pc, pk) = (by_predicted("clean"), by_predicted("contaminated"));
        let (lc, lk) = (by_label("clean"), by_label("contaminated"));
        let ok = |c: Option<f64>, k: Option<f64>| matches!((c, k), (Some(c), Some(k)) if c < 0.25 && k > 0.75);
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        verdict(
            ok(pc, pk) && ok(lc, lk),
            format!(
                "{} validation images; mean raw by predicted class clean {} / contaminated {}; by true label clean {} / contaminated {}",
                samples.len(),
                fmt(pc),
                fmt(pk),
                fmt(lc),
                fmt(lk)
            ),
        )
    }

    pub fn brightness(&self) -> Verdict {
        let classifier = self.classifier()?;
        let tints: Vec<Tint> = std::iter::once(Tint::None).chain(Tint::COLORS).collect();
        let (mut same, mut clean_originals) = (0, 0);
        for i in 0..100u64 {
            let params = SampleParams {
                tint: tints[i as usize % tints.len()],
                stage: 0,
                darkness: (i % 5) as f64 * 0.05,
                seed: 1_000_000 + i,
            };
            let original = generate_sample(params).map_err(|e| e.to_string())?.pixels;
            let darkened = original.map(|v| v * 0.4);
            let class = |img: &Tensor<f64>| -> Result<String, String> {
                let png = encode_png(img).map_err(|e| e.to_string())?;
                Ok(classifier.predict_bytes(&png, true).map_err(|e| e.to_string())?.class.to_string())
            };
            let (a, b) = (class(&original)?, class(&darkened)?);
            same += usize::from(a == b);
            clean_originals += usize::from(a == Label::Clean.name());
        }
        verdict(
            same >= 90,
            format!("same class for {same}/100 original vs x0.4 pairs ({clean_originals}/100 originals classified clean)"),
        )
    }

    pub fn serialization(&self) -> Verdict {
        let net = load(&self.weights).map_err(|e| e.to_string())?;
        let copy = self.dir.join("copy.aqsw");
        save(&net, &copy).map_err(|e| e.to_string())?;
        let back = load(&copy).map_err(|e| e.to_string())?;
        let mut rng = SeededRng::new(99);
        for i in 0..10 {
            let img = Tensor::new(vec![3, 64, 64], (0..3 * 64 * 64).map(|_| rng.uniform()).collect()).unwrap();
            let (a, b) = (net.predict(&img).map_err(|e| e.to_string())?, back.predict(&img).map_err(|e| e.to_string())?);
            if a.to_bits() != b.to_bits() {
                return Err(format!("image {i}: {a:e} before, {b:e} after round trip"));
            }
        }

        let bytes = std::fs::read(&copy).map_err(|e| e.to_string())?;
        let mut corrupted: Vec<(String, Vec<u8>)> = Vec::new();
        for len in [0, 1, 4, 7, 8, 12, 100, bytes.len() / 2, bytes.len() - 9, bytes.len() - 8, bytes.len() - 1] {
            corrupted.push((format!("truncated to {len}"), bytes[..len].to_vec()));
        }
        for _ in 0..50 {
            let len = rng.below(bytes.len());
            corrupted.push((format!("truncated to {len}"), bytes[..len].to_vec()));
        }
        for _ in 0..300 {
            let pos = rng.below(bytes.len());
            let mut b = bytes.clone();
            b[pos] ^= 1 + rng.below(255) as u8;
            corrupted.push((format!("byte {pos} flipped"), b));
        }
        let mut b = bytes.clone();
        b[..4].copy_from_slice(b"XXXX");
        corrupted.push(("bad magic".into(), b));
        let mut b = bytes.clone();
        b[4..8].copy_from_slice(&99u32.to_le_bytes());
        corrupted.push(("version 99".into(), b));
        let mut b = bytes.clone();
        b.extend_from_slice(&[0, 1, 2, 3]);
        corrupted.push(("trailing bytes".into(), b));

        for (what, b) in &corrupted {
            if WeightsFile::from_bytes(b).is_ok() {
                return Err(format!("corrupt file accepted: {what}"));
            }
        }
        Ok(format!("10/10 predictions bit-identical after save/load; {}/{} corrupted files rejected", corrupted.len(), corrupted.len()))
    }

    pub fn latency(&self) -> Verdict {
        let classifier = self.classifier()?;
        let img = generate_sample(SampleParams { tint: Tint::Green, stage: 2, darkness: 0.3, seed: 5 }).map_err(|e| e.to_string())?;
        let png = encode_png(&img.pixels).map_err(|e| e.to_string())?;
        for _ in 0..3 {
            classifier.predict_bytes(&png, true).map_err(|e| e.to_string())?;
        }
        let mut times: Vec<f64> = (0..20)
            .map(|_| {
                let t = Instant::now();
                classifier.predict_bytes(&png, true).map(|_| t.elapsed().as_secs_f64() * 1e3)
            })
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        times.sort_by(f64::total_cmp);
        let max = times[times.len() - 1];
        verdict(
            max <= LATENCY_BUDGET_MS,
            format!("decode + normalize + predict over 20 runs: median {:.2} ms, max {max:.2} ms", times[10]),
        )
    }

    pub fn service_contract(&self) -> Verdict {
        let server = Server::start(&self.weights)?;
        let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        let url = format!("http://{}/predict", server.addr);
        let post = |content_type: &str, body: &[u8]| -> Result<(u16, Value), String> {
            let mut resp = agent
                .post(&url)
                .header("Content-Type", content_type)
                .send(body)
                .map_err(|e| e.to_string())?;
            let status = resp.status().as_u16();
            let text = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
            Ok((status, serde_json::from_str(&text).unwrap_or(Value::Null)))
        };

        let mut agree = 0;
        for i in 0..20 {
            let image = self.data.join(format!("water_{:03}.png", i * 5 + 2));
            let cli: Value = serde_json::from_str(&run(&["predict", "--model", s(&self.weights), "--image", s(&image), "--json"])?)
                .map_err(|e| e.to_string())?;
            let bytes = std::fs::read(&image).map_err(|e| e.to_string())?;
            let (status, http) = post("image/png", &bytes)?;
            let raw6 = |v: &Value| v["raw"].as_f64().map(|r| format!("{r:.6}"));
            if status != 200 || cli["class"] != http["class"] || raw6(&cli).is_none() || raw6(&cli) != raw6(&http) {
                return Err(format!("{}: CLI {cli} vs HTTP {status} {http}", image.display()));
            }
            agree += 1;
        }

        let sample = std::fs::read(self.data.join("water_000.png")).map_err(|e| e.to_string())?;
        let checks = [
            ("garbage body", post("image/png", b"not an image")?.0, 400),
            ("empty body", post("image/png", b"")?.0, 400),
            ("truncated png", post("image/png", &sample[..sample.len() / 3])?.0, 400),
            ("text/plain", post("text/plain", &sample)?.0, 415),
            ("no content type", server.post_without_content_type(&sample)?, 415),
        ];
        let wrong: Vec<String> = checks.iter().filter(|c| c.1 != c.2).map(|c| format!("{} gave {} (want {})", c.0, c.1, c.2)).collect();
        verdict(
            wrong.is_empty(),
            if wrong.is_empty() {
                format!("{agree}/20 images agree with CLI on class and 6-decimal raw; 400 and 415 cases correct")
            } else {
                wrong.join("; ")
            },
        )
    }
}

/// `aquasight serve` on an ephemeral port, killed on drop.
struct Server {
    child: Child,
    addr: String,
}

impl Server {
    fn start(weights: &Path) -> Result<Self, String> {
        let mut child = bin()
            .args(["serve", "--model", s(weights), "--addr", "127.0.0.1:0"])
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| e.to_string())?;
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).map_err(|e| e.to_string())?;
        let addr = line
            .split("http://")
            .nth(1)
            .and_then(|rest| rest.split_whitespace().next())
            .map(str::to_string);
        match addr {
            Some(addr) => Ok(Self { child, addr }),
            None => {
                let _ = child.kill();
                Err(format!("unexpected readiness line {line:?}"))
            }
        }
    }

    fn post_without_content_type(&self, body: &[u8]) -> Result<u16, String> {
        let mut stream = std::net::TcpStream::connect(&self.addr).map_err(|e| e.to_string())?;
        write!(stream, "POST /predict HTTP/1.1\r\nHost: {}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n", self.addr, body.len())
            .and_then(|_| stream.write_all(body))
            .map_err(|e| e.to_string())?;
        let mut response = String::new();
        stream.read_to_string(&mut response).map_err(|e| e.to_string())?;
        response
            .split_whitespace()
            .nth(1)
            .and_then(|code| code.parse().ok())
            .ok_or_else(|| format!("malformed response {response:?}"))
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

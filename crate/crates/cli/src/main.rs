//! Batch entry point: run scenarios, replay traces through the
//! detectors, render reports, administer the toy PKI, verify audit
//! chains.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime error,
//! 4 verification failure.

use clap::{Args, Parser, Subcommand};
use secfab_core::crypto::{sha256, SigningKey};
use secfab_core::pki::{
    CertificateAuthority, RevocationList, RevocationReason, StatusChange, StatusResponder,
    SubjectKind,
};
use secfab_core::respond::{AuditLog, ChainCheck};
use secfab_core::scenario::{
    compute_metrics, load_trace, render_report, replay_detect, run_scenario, write_artifacts,
    LogFormat, ReportError, Scenario, TraceFormat, ALERTS_FILE,
};
use secfab_core::time::SimTime;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_OK: u8 = 0;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_VERIFY: u8 = 4;

#[derive(Parser)]
#[command(
    name = "secfab",
    version,
    about = "Deterministic security testbed for industrial wireless deployments"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write all artifacts.
    Run(RunArgs),
    /// Replay a recorded trace through the detectors.
    Replay(ReplayArgs),
    /// Summarize the artifacts of a finished run.
    Report {
        /// Artifact directory of a previous run.
        #[arg(long)]
        out: PathBuf,
    },
    /// Certificate authority administration.
    Pki {
        #[command(subcommand)]
        cmd: PkiCmd,
    },
    /// Audit log tools.
    Audit {
        #[command(subcommand)]
        cmd: AuditCmd,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Scenario configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed from the scenario file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Event log format: tsv (with a jsonl mirror) or jsonl only.
    #[arg(long, default_value = "tsv")]
    format: String,
}

#[derive(Args)]
struct ReplayArgs {
    /// Trace file: native event-log TSV, or IPAL-style JSON lines.
    #[arg(long)]
    trace: PathBuf,
    /// Treat the trace as IPAL-style JSON lines.
    #[arg(long)]
    ipal: bool,
    /// Load a pre-trained baseline instead of splitting the trace.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Leading fraction of the trace to train on.
    #[arg(long, default_value_t = 0.5)]
    train_split: f64,
    /// Ground-truth labels (ground_truth.jsonl) for metrics.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also write the trained baseline model here.
    #[arg(long)]
    save_model: Option<PathBuf>,
}

#[derive(Subcommand)]
enum PkiCmd {
    /// Issue a certificate.
    Issue {
        #[arg(long, default_value = "pki-state.json")]
        state: PathBuf,
        /// Initializes a fresh CA state file on first use.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// device | service | ca
        #[arg(long)]
        kind: String,
        #[arg(long)]
        subject: String,
        /// Required for device certificates.
        #[arg(long)]
        supi: Option<String>,
        /// Subject verifying key, hex; derived deterministically when
        /// omitted (the secret seed is printed once).
        #[arg(long)]
        public_key: Option<String>,
        #[arg(long, default_value_t = 0)]
        not_before_ms: u64,
        #[arg(long, default_value_t = 86_400_000)]
        not_after_ms: u64,
    },
    /// Transition a certificate's status.
    SetStatus {
        #[arg(long, default_value = "pki-state.json")]
        state: PathBuf,
        #[arg(long)]
        serial: u64,
        /// good | suspended | revoked:compromise|policy|exclusion
        #[arg(long)]
        status: String,
        #[arg(long)]
        now_ms: u64,
    },
    /// Query the status responder for one serial.
    Status {
        #[arg(long, default_value = "pki-state.json")]
        state: PathBuf,
        #[arg(long)]
        serial: u64,
        #[arg(long)]
        now_ms: u64,
    },
    /// Build and print the signed revocation list.
    Crl {
        #[arg(long, default_value = "pki-state.json")]
        state: PathBuf,
        #[arg(long)]
        now_ms: u64,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum AuditCmd {
    /// Recompute an audit chain; exit 4 if broken.
    Verify {
        #[arg(long)]
        log: PathBuf,
    },
}

/// Persistent admin state: CA registry plus the responder identity.
#[derive(Serialize, Deserialize)]
struct PkiState {
    ca: CertificateAuthority,
    responder_id: String,
    responder_seed_hex: String,
}

impl PkiState {
    fn init(seed: u64) -> Self {
        let ca_seed = sha256(format!("pki-ca:{seed}").as_bytes());
        let responder_seed = sha256(format!("pki-responder:{seed}").as_bytes());
        PkiState {
            ca: CertificateAuthority::new("ca-root", SigningKey::from_seed(ca_seed)),
            responder_id: "ocsp-1".to_string(),
            responder_seed_hex: hex::encode(responder_seed),
        }
    }

    fn load_or_init(path: &Path, seed: u64) -> Result<Self, String> {
        if path.exists() {
            let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
        } else {
            Ok(PkiState::init(seed))
        }
    }

    fn save(&self, path: &Path) -> Result<(), String> {
        fs::write(path, serde_json::to_string_pretty(self).expect("state serializes"))
            .map_err(|e| e.to_string())
    }

    fn responder(&self) -> StatusResponder {
        let seed: [u8; 32] = hex::decode(&self.responder_seed_hex)
            .expect("state holds valid hex")
            .try_into()
            .expect("32-byte responder seed");
        StatusResponder::new(self.responder_id.clone(), SigningKey::from_seed(seed))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Replay(args) => cmd_replay(args),
        Cmd::Report { out } => cmd_report(&out),
        Cmd::Pki { cmd } => cmd_pki(cmd),
        Cmd::Audit { cmd } => cmd_audit(cmd),
    };
    ExitCode::from(code)
}

fn cmd_run(args: RunArgs) -> u8 {
    let format = match args.format.as_str() {
        "tsv" => LogFormat::Tsv,
        "jsonl" => LogFormat::Jsonl,
        other => {
            eprintln!("unknown --format {other:?} (expected tsv or jsonl)");
            return EXIT_CONFIG;
        }
    };
    let text = match fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", args.config.display());
            return EXIT_CONFIG;
        }
    };
    let base = args.config.parent().map(Path::to_path_buf);
    let mut scenario = match Scenario::parse_with_base(&text, base.as_deref()) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{}: {e}", args.config.display());
            return EXIT_CONFIG;
        }
    };
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let train_window = scenario.train_window;
    let artifacts = match run_scenario(scenario) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("run failed: {e}");
            return EXIT_RUNTIME;
        }
    };
    let metrics = compute_metrics(&artifacts, train_window);
    if let Err(e) = write_artifacts(&args.out, &artifacts, &metrics, format) {
        eprintln!("cannot write artifacts to {}: {e}", args.out.display());
        return EXIT_RUNTIME;
    }
    println!(
        "{}: {} events, {} alerts, {} actions, audit {}",
        metrics.scenario,
        artifacts.events.len(),
        artifacts.alerts.len(),
        artifacts.actions.len(),
        if metrics.audit.valid { "valid" } else { "BROKEN" }
    );
    println!("artifacts written to {}", args.out.display());
    EXIT_OK
}

fn cmd_replay(args: ReplayArgs) -> u8 {
    let text = match fs::read_to_string(&args.trace) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", args.trace.display());
            return EXIT_CONFIG;
        }
    };
    let format = if args.ipal || args.trace.extension().is_some_and(|e| e == "jsonl") {
        TraceFormat::Ipal
    } else {
        TraceFormat::Native
    };
    let trace = match load_trace(&text, format) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{}: {e}", args.trace.display());
            return EXIT_CONFIG;
        }
    };
    let model = match &args.model {
        Some(path) => match fs::read_to_string(path)
            .map_err(|e| e.to_string())
            .and_then(|t| {
                secfab_core::detect::BaselineModel::from_json(&t).map_err(|e| e.to_string())
            }) {
            Ok(m) => Some(m),
            Err(e) => {
                eprintln!("cannot load model {}: {e}", path.display());
                return EXIT_CONFIG;
            }
        },
        None => None,
    };
    let labels = match &args.labels {
        Some(path) => match fs::read_to_string(path) {
            Ok(text) => {
                let mut truth = Vec::new();
                for (i, line) in text.lines().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    match serde_json::from_str(line) {
                        Ok(t) => truth.push(t),
                        Err(e) => {
                            eprintln!("{} line {}: {e}", path.display(), i + 1);
                            return EXIT_CONFIG;
                        }
                    }
                }
                Some(truth)
            }
            Err(e) => {
                eprintln!("cannot read {}: {e}", path.display());
                return EXIT_CONFIG;
            }
        },
        None => None,
    };

    let outcome = match replay_detect(
        trace,
        model,
        args.train_split,
        Default::default(),
        labels.as_deref(),
    ) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("replay failed: {e}");
            return EXIT_RUNTIME;
        }
    };

    if let Err(e) = fs::create_dir_all(&args.out) {
        eprintln!("cannot create {}: {e}", args.out.display());
        return EXIT_RUNTIME;
    }
    let mut alerts_text = String::new();
    for a in &outcome.alerts {
        alerts_text.push_str(&serde_json::to_string(a).expect("alert serializes"));
        alerts_text.push('\n');
    }
    if let Err(e) = fs::write(args.out.join(ALERTS_FILE), alerts_text) {
        eprintln!("cannot write alerts: {e}");
        return EXIT_RUNTIME;
    }
    if let Some(stats) = &outcome.stats {
        let path = args.out.join("replay_metrics.json");
        if let Err(e) =
            fs::write(&path, serde_json::to_string_pretty(stats).expect("stats serialize"))
        {
            eprintln!("cannot write {}: {e}", path.display());
            return EXIT_RUNTIME;
        }
    }
    if let Some(path) = &args.save_model {
        if let Err(e) = fs::write(path, outcome.model.to_json()) {
            eprintln!("cannot write model {}: {e}", path.display());
            return EXIT_RUNTIME;
        }
    }
    println!(
        "replayed {} events (trained on {}), {} alerts{}",
        outcome.trace.len(),
        outcome.trained_on,
        outcome.alerts.len(),
        match &outcome.stats {
            Some(s) => format!(
                ", precision {} recall {}",
                s.precision.map_or("n/a".into(), |p| format!("{p:.3}")),
                s.attack_recall.map_or("n/a".into(), |r| format!("{r:.3}"))
            ),
            None => ", no ground truth: metrics omitted".to_string(),
        }
    );
    EXIT_OK
}

fn cmd_report(out: &Path) -> u8 {
    match render_report(out) {
        Ok(text) => {
            print!("{text}");
            EXIT_OK
        }
        Err(ReportError::MissingArtifacts(names)) => {
            eprintln!("missing artifacts in {}:", out.display());
            for n in names {
                eprintln!("  {n}");
            }
            EXIT_RUNTIME
        }
        Err(e) => {
            eprintln!("{e}");
            EXIT_RUNTIME
        }
    }
}

fn parse_status(s: &str) -> Result<StatusChange, String> {
    match s {
        "good" => Ok(StatusChange::Good),
        "suspended" => Ok(StatusChange::Suspended),
        other => match other.strip_prefix("revoked:") {
            Some(reason) => reason
                .parse::<RevocationReason>()
                .map(StatusChange::Revoked)
                .map_err(|_| format!("unknown revocation reason {reason:?}")),
            None => Err(format!("unknown status {other:?}")),
        },
    }
}

fn cmd_pki(cmd: PkiCmd) -> u8 {
    match cmd {
        PkiCmd::Issue {
            state,
            seed,
            kind,
            subject,
            supi,
            public_key,
            not_before_ms,
            not_after_ms,
        } => {
            let kind = match kind.as_str() {
                "device" => SubjectKind::Device,
                "service" => SubjectKind::Service,
                "ca" => SubjectKind::Ca,
                other => {
                    eprintln!("unknown subject kind {other:?}");
                    return EXIT_CONFIG;
                }
            };
            let mut st = match PkiState::load_or_init(&state, seed) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("{e}");
                    return EXIT_CONFIG;
                }
            };
            let key_bytes = match &public_key {
                Some(hex_key) => match hex::decode(hex_key) {
                    Ok(b) => b,
                    Err(e) => {
                        eprintln!("bad --public-key hex: {e}");
                        return EXIT_CONFIG;
                    }
                },
                None => {
                    let subject_seed = sha256(format!("pki-subject:{seed}:{subject}").as_bytes());
                    let sk = SigningKey::from_seed(subject_seed);
                    println!("subject-signing-seed: {}", hex::encode(subject_seed));
                    sk.verifying_key().to_bytes().to_vec()
                }
            };
            match st.ca.issue(
                kind,
                &subject,
                supi.as_deref(),
                &key_bytes,
                SimTime::from_ms(not_before_ms),
                SimTime::from_ms(not_after_ms),
            ) {
                Ok(cert) => {
                    if let Err(e) = st.save(&state) {
                        eprintln!("cannot save state: {e}");
                        return EXIT_RUNTIME;
                    }
                    println!("{}", serde_json::to_string_pretty(&cert).unwrap());
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("issue rejected: {e}");
                    EXIT_RUNTIME
                }
            }
        }
        PkiCmd::SetStatus { state, serial, status, now_ms } => {
            let change = match parse_status(&status) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("{e}");
                    return EXIT_CONFIG;
                }
            };
            let mut st = match PkiState::load_or_init(&state, 7) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("{e}");
                    return EXIT_CONFIG;
                }
            };
            match st.ca.set_status(serial, change, SimTime::from_ms(now_ms)) {
                Ok(new_status) => {
                    if let Err(e) = st.save(&state) {
                        eprintln!("cannot save state: {e}");
                        return EXIT_RUNTIME;
                    }
                    println!("serial {serial}: {new_status}");
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("transition rejected: {e}");
                    EXIT_RUNTIME
                }
            }
        }
        PkiCmd::Status { state, serial, now_ms } => {
            let st = match PkiState::load_or_init(&state, 7) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("{e}");
                    return EXIT_CONFIG;
                }
            };
            let response = st.responder().query(&st.ca, serial, SimTime::from_ms(now_ms));
            println!("{}", serde_json::to_string_pretty(&response).unwrap());
            EXIT_OK
        }
        PkiCmd::Crl { state, now_ms, out } => {
            let st = match PkiState::load_or_init(&state, 7) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("{e}");
                    return EXIT_CONFIG;
                }
            };
            let list = st.ca.build_revocation_list(SimTime::from_ms(now_ms));
            let text = list.to_text();
            debug_assert!(RevocationList::from_text(&text).is_ok());
            match out {
                Some(path) => {
                    if let Err(e) = fs::write(&path, text) {
                        eprintln!("cannot write {}: {e}", path.display());
                        return EXIT_RUNTIME;
                    }
                    println!("revocation list written to {}", path.display());
                }
                None => print!("{text}"),
            }
            EXIT_OK
        }
    }
}

fn cmd_audit(cmd: AuditCmd) -> u8 {
    match cmd {
        AuditCmd::Verify { log } => {
            let text = match fs::read_to_string(&log) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("cannot read {}: {e}", log.display());
                    return EXIT_CONFIG;
                }
            };
            let audit = match AuditLog::from_jsonl(&text) {
                Ok(a) => a,
                Err(e) => {
                    eprintln!("{e}");
                    return EXIT_VERIFY;
                }
            };
            match audit.verify_chain() {
                ChainCheck::Valid => {
                    println!("audit chain valid ({} entries)", audit.len());
                    EXIT_OK
                }
                ChainCheck::BrokenAt(i) => {
                    println!("audit chain BROKEN at index {i}");
                    EXIT_VERIFY
                }
            }
        }
    }
}

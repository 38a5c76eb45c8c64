use std::io::{BufReader, BufWriter, IsTerminal, Read, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use gex_client::api::*;
use gex_client::ApiClient;
use gex_core::gesture::{read_gesture, write_record, GestureRecord, HandRecord};
use gex_gateway::{Gateway, Settings};
use tracing_subscriber::EnvFilter;

/// Teleoperation toolkit for the GX11 hand and EX12 glove.
#[derive(Parser)]
#[command(name = "gex", version, about)]
struct Cli {
    /// Gateway config file (TOML). The shipped rig and cup are used without one.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run operations on a running gateway instead of an in-process one.
    #[arg(long, global = true, value_name = "URL")]
    remote: Option<String>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a fingertip workspace into a CSV point cloud.
    Workspace {
        /// `glove`, `hand`, a model name, or a model document path.
        #[arg(long, default_value = "hand")]
        model: String,
        #[arg(long)]
        finger: String,
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retarget a recorded glove gesture onto the hand.
    Retarget {
        #[arg(long)]
        glove: Option<String>,
        #[arg(long)]
        hand: Option<String>,
        /// Gesture file, one `{"t", "q_glove"}` record per line.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode servo bus frames from hex (arguments, a file, or stdin).
    Decode {
        hex: Vec<String>,
        #[arg(long, conflicts_with = "hex")]
        file: Option<PathBuf>,
    },
    /// Run the gateway with a live teleop session on `/ws`.
    Serve {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        port: Option<u16>,
    },
    /// Replay a gesture headlessly through the teleop loop.
    Replay {
        #[arg(long)]
        gesture: PathBuf,
        /// Per-tick reports, one JSON object per line.
        #[arg(long)]
        out: PathBuf,
        /// Summary JSON; defaults to `<out>.summary.json`.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Also write the hand trajectory as `{"t", "q_hand"}` lines.
        #[arg(long)]
        hand_out: Option<PathBuf>,
        /// Session setup saved next to a recording (`<gesture>.setup.json`);
        /// overrides the configured parameters and scene.
        #[arg(long)]
        setup: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let filter = EnvFilter::try_from_env("GEX_LOG").unwrap_or_else(|_| EnvFilter::new("info"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    let cli = Cli::parse();
    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn settings(config: Option<&Path>) -> anyhow::Result<Settings> {
    Ok(match config {
        Some(p) => Settings::load(p)?,
        None => Settings::shipped(),
    })
}

async fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    if let Cmd::Serve { bind, port } = &cli.command {
        if cli.remote.is_some() {
            bail!("serve runs a gateway; it cannot be combined with --remote");
        }
        let s = settings(cli.config.as_deref())?;
        let addr: SocketAddr = format!("{}:{}", bind.as_deref().unwrap_or(&s.bind), port.unwrap_or(s.port))
            .parse()
            .context("bad bind address")?;
        let gateway = Gateway::start(s, addr, true).await?;
        tracing::info!(url = %gateway.ws_url(), "serving");
        println!("listening on {}", gateway.url());
        gateway.run_until(shutdown_signal()).await?;
        return Ok(ExitCode::SUCCESS);
    }

    // Every other command is a client of the service: a remote one, or a
    // private gateway on an ephemeral loopback port.
    let (client, local) = match &cli.remote {
        Some(url) => (ApiClient::new(url.clone()), None),
        None => {
            let s = settings(cli.config.as_deref())?;
            let gw = Gateway::start(s, SocketAddr::from(([127, 0, 0, 1], 0)), false).await?;
            (ApiClient::new(gw.url()), Some(gw))
        }
    };
    let result = command(&client, cli.command).await;
    if let Some(gw) = local {
        gw.shutdown().await?;
    }
    result
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutting down");
}

fn model_ref(arg: &str) -> anyhow::Result<ModelRef> {
    let path = Path::new(arg);
    Ok(if path.is_file() {
        ModelRef::Document(std::fs::read_to_string(path).with_context(|| format!("reading {arg}"))?)
    } else {
        ModelRef::Name(arg.to_string())
    })
}

fn load_gesture(path: &Path) -> anyhow::Result<Vec<GestureRecord>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_gesture(BufReader::new(file), None).with_context(|| format!("reading {}", path.display()))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<std::fs::File>> {
    Ok(BufWriter::new(std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// `v` with `digits` significant digits, in plain decimal notation.
fn significant(v: f64, digits: i32) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let magnitude = v.abs().log10().floor() as i32;
    format!("{:.*}", (digits - 1 - magnitude).max(0) as usize, v)
}

async fn command(client: &ApiClient, cmd: Cmd) -> anyhow::Result<ExitCode> {
    match cmd {
        Cmd::Serve { .. } => unreachable!("handled by run"),
        Cmd::Workspace { model, finger, n, seed, out } => {
            let req = WorkspaceRequest { model: model_ref(&model)?, finger, n, seed };
            let resp = client.workspace(&req).await?;
            let mut w = create(&out)?;
            for p in &resp.points {
                writeln!(w, "{},{},{}", significant(p[0], 9), significant(p[1], 9), significant(p[2], 9))?;
            }
            w.flush()?;
            println!(
                "{} points written to {}; convex hull volume {:.6e} m^3 ({:.3} cm^3)",
                resp.points.len(),
                out.display(),
                resp.hull_volume,
                resp.hull_volume * 1e6
            );
        }
        Cmd::Retarget { glove, hand, input, out } => {
            let req = RetargetRequest {
                glove: glove.as_deref().map(model_ref).transpose()?,
                hand: hand.as_deref().map(model_ref).transpose()?,
                gesture: load_gesture(&input)?,
            };
            let resp = client.retarget(&req).await?;
            let mut w = create(&out)?;
            for r in &resp.trajectory {
                write_record(&mut w, r)?;
            }
            w.flush()?;
            println!("{} frames written to {}", resp.trajectory.len(), out.display());
            if let (Some(h), Some(g)) = (resp.final_pinch_hand, resp.final_pinch_glove) {
                println!("final thumb-index distance: hand {:.2} mm, glove {:.2} mm", h * 1e3, g * 1e3);
            }
        }
        Cmd::Decode { hex, file } => {
            let text = match (file, hex.is_empty()) {
                (Some(f), _) => std::fs::read_to_string(&f).with_context(|| format!("reading {}", f.display()))?,
                (None, false) => hex.join(" "),
                (None, true) => {
                    let mut s = String::new();
                    std::io::stdin().read_to_string(&mut s)?;
                    s
                }
            };
            let resp = client.decode(&DecodeRequest { hex: text }).await?;
            let stdout = std::io::stdout();
            let mut o = stdout.lock();
            for f in &resp.frames {
                writeln!(o, "{}", f.line)?;
            }
            if resp.trailing > 0 {
                writeln!(o, "incomplete frame: {} trailing bytes", resp.trailing)?;
            }
            if resp.bad > 0 || resp.trailing > 0 {
                return Ok(ExitCode::FAILURE);
            }
        }
        Cmd::Replay { gesture, out, summary, hand_out, setup } => {
            let setup = match setup {
                None => None,
                Some(p) => {
                    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    Some(serde_json::from_str::<SessionSetup>(&text).with_context(|| format!("parsing {}", p.display()))?)
                }
            };
            let resp = client.replay(&ReplayRequest { gesture: load_gesture(&gesture)?, setup }).await?;
            let mut w = create(&out)?;
            for t in &resp.ticks {
                write_record(&mut w, t)?;
            }
            w.flush()?;
            if let Some(p) = hand_out {
                let mut h = create(&p)?;
                for t in &resp.ticks {
                    write_record(&mut h, &HandRecord { t: t.timestamp, q_hand: t.q_hand.clone() })?;
                }
                h.flush()?;
            }
            let summary_path = summary.unwrap_or_else(|| {
                let mut s = out.clone().into_os_string();
                s.push(".summary.json");
                PathBuf::from(s)
            });
            std::fs::write(&summary_path, serde_json::to_string_pretty(&resp.summary)?)
                .with_context(|| format!("writing {}", summary_path.display()))?;
            let s = &resp.summary;
            println!("{} ticks ({:.2} s) written to {}", s.ticks, s.duration, out.display());
            println!("engaged fingers: {:?}", s.engaged_fingers);
            println!("contact persistence (s): {:?}", s.contact_persistence);
            println!("max feedback torque (N·m): {:?}", s.max_feedback_torque);
            println!("summary written to {}", summary_path.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

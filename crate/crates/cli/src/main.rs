use std::io::IsTerminal;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tiller_cli::{logs, Api, FailSafe, LinePrompter, NewTask, Prompter, Run, RunOptions, Target};
use tiller_core::protocol::TaskId;

#[derive(Parser, Debug)]
#[command(name = "tiller", version, about = "Run and steer tiller coding tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Approval,
    Autonomous,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EffortArg {
    Low,
    Medium,
    High,
}

#[derive(clap::Args, Debug)]
struct Connection {
    #[arg(long, env = "TILLER_SERVER", default_value = "http://127.0.0.1:7878")]
    server: String,
    #[arg(long, env = "TILLER_TOKEN", hide_env_values = true)]
    token: Option<String>,
}

#[derive(clap::Args, Debug)]
struct Local {
    /// Directory the tools run in.
    #[arg(long, default_value = ".")]
    workdir: PathBuf,
    /// Where completed invocations are remembered across restarts.
    #[arg(long, env = "TILLER_STATE_DIR")]
    state_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Create a task (or resume one) and execute it here.
    Run {
        prompt: Option<String>,
        #[arg(long, value_enum, default_value = "approval")]
        mode: ModeArg,
        /// Ask for a plan and review it before any tool runs.
        #[arg(long)]
        plan: bool,
        #[arg(long, value_enum, default_value = "medium")]
        effort: EffortArg,
        /// Name of a server-side policy.
        #[arg(long)]
        policy: Option<String>,
        #[arg(long, value_name = "TASK_ID", conflicts_with = "prompt")]
        resume: Option<String>,
        #[command(flatten)]
        conn: Connection,
        #[command(flatten)]
        local: Local,
    },
    /// Attach to a parked task and carry on.
    Resume {
        task_id: String,
        #[command(flatten)]
        conn: Connection,
        #[command(flatten)]
        local: Local,
    },
    /// Print a task's timeline.
    Logs {
        task_id: String,
        /// Keep streaming until the task ends.
        #[arg(long)]
        follow: bool,
        #[command(flatten)]
        conn: Connection,
    },
}

fn default_state_dir() -> PathBuf {
    match std::env::var_os("HOME") {
        Some(home) => PathBuf::from(home).join(".local/state/tiller"),
        None => std::env::temp_dir().join("tiller-state"),
    }
}

fn prompter() -> Box<dyn Prompter> {
    if std::io::stdin().is_terminal() {
        Box::new(LinePrompter::new(std::io::BufReader::new(std::io::stdin()), std::io::stderr()))
    } else {
        Box::new(FailSafe)
    }
}

async fn execute(conn: Connection, local: Local, target: Target) -> i32 {
    let api = Api::new(&conn.server, conn.token);
    let run = Run {
        api: &api,
        prompter: prompter(),
        out: Box::new(std::io::stdout()),
        faults: None,
    };
    let opts = RunOptions {
        target,
        workdir: local.workdir,
        state_dir: Some(local.state_dir.unwrap_or_else(default_state_dir)),
    };
    run.execute(opts).await.exit_code
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            prompt,
            mode,
            plan,
            effort,
            policy,
            resume,
            conn,
            local,
        } => {
            let target = match (resume, prompt) {
                (Some(id), _) => Target::Resume(TaskId::new(id)),
                (None, Some(prompt)) => Target::New(NewTask {
                    prompt,
                    mode: format!("{mode:?}").to_lowercase(),
                    planning: plan,
                    effort: format!("{effort:?}").to_lowercase(),
                    policy,
                }),
                (None, None) => {
                    eprintln!("error: give a prompt or --resume TASK_ID");
                    return ExitCode::from(64);
                }
            };
            execute(conn, local, target).await
        }
        Command::Resume { task_id, conn, local } => execute(conn, local, Target::Resume(TaskId::new(task_id))).await,
        Command::Logs { task_id, follow, conn } => {
            let api = Api::new(&conn.server, conn.token);
            logs(&api, &TaskId::new(task_id), follow, &mut std::io::stdout()).await
        }
    };
    ExitCode::from(code as u8)
}

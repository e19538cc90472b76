// SPDX-License-Identifier: MIT OR Apache-2.0

use std::io::Write;

use cxaff_cli::{Cli, Command};

/// One JSON object per line. The service logs to stdout, other commands to
/// stderr so their stdout stays machine readable.
fn init_logging(cli: &Cli) {
    let target = match cli.command {
        Command::Serve(_) => env_logger::Target::Stdout,
        _ => env_logger::Target::Stderr,
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(target)
        .format(|buf, rec| {
            let line = serde_json::json!({
                "ts": buf.timestamp_millis().to_string(),
                "level": rec.level().as_str(),
                "target": rec.target(),
                "msg": rec.args().to_string(),
            });
            writeln!(buf, "{line}")
        })
        .init();
}

fn main() {
    let code = cxaff_cli::run_with(
        std::env::args_os(),
        &mut std::io::stdout(),
        &mut std::io::stderr(),
        init_logging,
    );
    std::process::exit(code);
}

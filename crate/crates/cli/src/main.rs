use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Ok(v) = std::env::var("MOMFIT_THREADS") {
        match v.parse::<usize>() {
            Ok(k) if k > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new()
                    .num_threads(k)
                    .build_global()
                {
                    log::warn!("MOMFIT_THREADS ignored: {e}");
                }
            }
            _ => {
                eprintln!("error: MOMFIT_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(momfit_cli::EXIT_ERROR as u8);
            }
        }
    }
    ExitCode::from(momfit_cli::run(std::env::args_os()) as u8)
}

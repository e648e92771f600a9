use emg_trf::cli::{main_with_args, THREADS_ENV};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("error: cannot start thread pool: {e}");
                    std::process::exit(1);
                }
            }
            _ => {
                eprintln!("error: {THREADS_ENV} must be a positive integer, got '{v}'");
                std::process::exit(1);
            }
        }
    }
    std::process::exit(main_with_args(std::env::args_os()));
}

use clap::Parser;

fn main() {
    let cli = arstack::cli::Cli::parse();
    let config = match cli.into_config() {
        Ok(config) => config,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    };
    if let Err(e) = arstack::cli::run(&config) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

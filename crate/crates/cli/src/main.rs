use clap::Parser;

fn main() {
    let cli = lim_cli::Cli::parse();
    if let Err(e) = lim_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

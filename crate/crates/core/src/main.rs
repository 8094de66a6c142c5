use clap::Parser;

fn main() {
    let cli = vlcurate::cli::Cli::parse();
    std::process::exit(vlcurate::cli::run(cli));
}

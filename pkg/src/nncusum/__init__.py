"""Neural-network CUSUM change detection."""

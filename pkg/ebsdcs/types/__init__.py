"""TypedDict definitions of the JSON documents ebsdcs reads and writes."""
